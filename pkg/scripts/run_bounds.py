"""Regularity constants on the relaxed trajectory and the admissible step width for several gammas."""
import sys
from pathlib import Path

from mimpc.analysis import max_step_width, read_report
from mimpc.cli import main

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/bounds")
if main(["bounds", "--out", str(out)]):
    sys.exit(1)
rep = read_report(out / "bounds.txt")
for gamma in (0.01, 0.02, 0.05, 0.1):
    dt = max_step_width(gamma, rep["L"], rep["M"], rep["C"], rep["coarse_step"], rep["cardinality"])
    print(f"gamma = {gamma:<5} dt_max = {dt:.5f} s  (coarse step / {rep['coarse_step'] / dt:.1f})")
