"""Six fractures in a sheared 2 m x 1 m block.

Runs the ``ex1`` preset, prints the per-fracture summary and writes VTK and CSV
output to ``output/ex1``.

    python demos/fractured_shear.py [n]
"""
import sys
from pathlib import Path

from fracbiot.scenarios import preset, run_scenario

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10
result = run_scenario(preset("ex1", n=n), output_dir=Path("output") / "ex1")
print(result.report.to_text(), end="")
