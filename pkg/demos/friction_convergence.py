"""Mesh convergence with constant and tip-regularized friction.

The constant-friction traction does not converge near the fracture tips; the
regularized coefficient restores convergence. Takes a few minutes.

    python demos/friction_convergence.py
"""
from fracbiot.convergence import run_convergence_study
from fracbiot.scenarios import preset

LEVELS, REFERENCE = [8, 16, 32], 64

for regularized in (False, True):
    table = run_convergence_study(
        lambda n: preset("appendix", n=int(n), regularized=regularized), LEVELS, REFERENCE
    )
    print("regularized friction" if regularized else "constant friction")
    print(table.to_text(), end="")
    for key in (("jump", "f"), ("lam", "f"), ("u", "omega")):
        print(f"  fitted order {key[0]}: {table.fitted(key):.2f}")
