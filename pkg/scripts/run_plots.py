"""Relaxed and rounded closed loops plus the four-panel figure.

Runs the sweep unless its CSVs already exist, writes the plotting script
and renders it (needs matplotlib).

    python scripts/run_plots.py [--out runs/sweep]
"""
import argparse
import subprocess
import sys
from pathlib import Path

from mimpc.cli import main


def run(out: Path) -> int:
    if not (out / "relaxed.csv").exists():
        code = main(["sweep", "--out", str(out), "--repeats", "1"])
        if code:
            return code
    main(["report", "--out", str(out)])
    return subprocess.call([sys.executable, str(out / "plot_runs.py"), str(out / "closed_loop.png")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    sys.exit(run(ap.parse_args().out))
