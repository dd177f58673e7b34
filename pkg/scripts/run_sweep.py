"""Benchmark sweep over the oversampling divisors, printed next to the reference values.

    python scripts/run_sweep.py [--out runs/sweep] [--repeats 5]
"""
import argparse
import csv
import sys
from pathlib import Path

from mimpc.cli import main

REFERENCE = {  # divisor: (sigma_max, gamma_max, t_r percent)
    1: (0.1059, 0.1036, 0.1563),
    2: (0.0525, 0.0411, 0.1870),
    5: (0.0207, 0.0173, 0.1875),
    10: (0.0105, 0.0113, 0.2444),
    30: (0.0035, 0.0024, 0.2856),
}


def run(out: Path, repeats: int) -> int:
    code = main(["sweep", "--out", str(out), "--repeats", str(repeats)])
    if code:
        return code
    print(f"\n{'divisor':>7} {'sigma_max':>10} {'ref':>7} {'gamma_max':>10} {'ref':>7} {'t_r %':>7} {'ref':>7}")
    for row in csv.DictReader((out / "summary.csv").open()):
        d = int(row["dt_divisor"])
        s, g, t = REFERENCE.get(d, (float("nan"),) * 3)
        print(f"{d:>7} {float(row['sigma_max']):>10.4f} {s:>7.4f} {float(row['gamma_max']):>10.4f} {g:>7.4f} "
              f"{float(row['t_r_percent']):>7.3f} {t:>7.4f}")
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    sys.exit(run(args.out, args.repeats))
