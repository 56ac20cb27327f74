"""Compare a one-dimensional consolidation run with the series solution.

    python demos/consolidation.py [cells]
"""
import sys

from fracbiot.oracle import terzaghi_field_of, terzaghi_reference
from fracbiot.scenarios import preset

cells = int(sys.argv[1]) if len(sys.argv) > 1 else 50
cfg = preset("consolidation", cells=cells)
field = terzaghi_field_of(cfg)
times = [f * field.H**2 / field.cv for f in (0.01, 0.03, 0.1)]
cmp_ = terzaghi_reference(cfg, times=times)
for t, err in zip(times, cmp_.errors):
    print(f"t = {t:10.4g} s  relative L2 pressure error {err:.3e}")
print(f"first-step overshoot {cmp_.overshoot:.3e}")
