"""Command-line entry point: ``mimpc <subcommand> [options]``.

Exit codes: 0 success, 1 other library failure, 2 configuration error,
3 solver infeasibility, 4 integration overflow.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import BoundsReport, estimate_constants, gap_metrics, trajectory_region
from .config import ExperimentConfig, build_problem, load_config
from .errors import ConfigError, ContractError, IntegrationOverflowError, MpcError, SolverInfeasibleError
from .mpc import ClosedLoopError, ClosedLoopLog, run_closed_loop
from .nlp import solve_ocp
from .ocp import OcpProblem
from .rounding import theoretical_bounds

log = logging.getLogger("mimpc")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OVERFLOW = 0, 1, 2, 3, 4

TABLE_COLUMNS = ["dt_divisor", "dt", "sigma_max", "gamma_max", "t_r_percent", "sigma_sur_bound"]
TIMING_COLUMNS = {"solve_ms", "round_us", "t_r_percent"}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ClosedLoopError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SolverInfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, IntegrationOverflowError):
        return EXIT_OVERFLOW
    return EXIT_FAIL


def run_name(mode: str, divisor: int = 1, method: str = "sur") -> str:
    return "relaxed" if mode == "relaxed" else f"rounded_{method}_d{divisor}"


def _persist(lg: ClosedLoopLog, out: Path, name: str) -> list[Path]:
    paths = [lg.to_csv(out / f"{name}.csv")]
    if lg.mode == "rounded":
        paths.append(lg.fine_to_csv(out / f"{name}_fine.csv"))
    return paths


def closed_loop(problem: OcpProblem, cfg: ExperimentConfig, out: Path, mode: str, divisor: int,
                repeats: int = 1) -> ClosedLoopLog:
    """One run; the (partial) log is written even when a step fails."""
    e = cfg.experiment
    name = run_name(mode, divisor, e.rounding)
    try:
        lg = run_closed_loop(problem, e.x0, e.steps, mode, divisor, e.rounding, cfg.solver_settings(),
                             e.carry_deficit, repeats)
    except ClosedLoopError as exc:
        _persist(exc.partial, out, name)
        log.error("%s: %s (partial log written)", name, exc)
        raise
    _persist(lg, out, name)
    return lg


def sweep(problem: OcpProblem, cfg: ExperimentConfig, out: Path) -> list[dict]:
    """Relaxed reference run plus one rounded run per divisor; writes ``summary.csv``."""
    e = cfg.experiment
    closed_loop(problem, cfg, out, "relaxed", 1)
    rows = []
    for d in e.divisors:
        t0 = time.perf_counter()
        lg = closed_loop(problem, cfg, out, "rounded", d, e.repeats)
        gm = gap_metrics(lg)
        dt = problem.grid.coarse_step / d
        rows.append({
            "dt_divisor": d,
            "dt": dt,
            "sigma_max": gm.sigma_max,
            "gamma_max": gm.gamma_max,
            "t_r_percent": gm.t_r,
            "sigma_sur_bound": theoretical_bounds(problem.ctrl.cardinality, dt, d).sigma_sur,
        })
        log.info("divisor %d: sigma_max=%.5f gamma_max=%.5f t_r=%.3f%% (%.1f s)", d, gm.sigma_max,
                 gm.gamma_max, gm.t_r, time.perf_counter() - t0)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in rows:
            w.writerow([r["dt_divisor"], repr(r["dt"]), repr(r["sigma_max"]), repr(r["gamma_max"]),
                        f"{r['t_r_percent']:.4f}", repr(r["sigma_sur_bound"])])
    return rows


def bounds(problem: OcpProblem, cfg: ExperimentConfig, out: Path) -> BoundsReport:
    """Constants on the inflated box around the relaxed closed loop, plus the terminal ingredients."""
    e = cfg.experiment
    relaxed = closed_loop(problem, cfg, out, "relaxed", 1)
    region = trajectory_region(relaxed.states)
    L, M, C = estimate_constants(problem.model, problem.ctrl, region, e.bound_samples, e.seed)
    term = problem.terminal
    rep = BoundsReport(L, M, C, region, problem.grid.coarse_step, e.dt_divisor, problem.ctrl.cardinality,
                       e.gamma, extras={
                           "samples": e.bound_samples, "seed": e.seed,
                           "P": term.P.tolist(), "K": term.K.tolist(), "pi": term.pi, "rho": term.rho,
                       })
    rep.write(out / "bounds.txt")
    return rep


PLOT_TEMPLATE = '''"""Render the four closed-loop panels from the CSVs in this directory.

Usage: python {script} [output.png]
"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
DIVISORS = {divisors!r}
METHOD = {method!r}


def load(name):
    path = HERE / (name + ".csv")
    if not path.exists():
        return None
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    cols = {{k: [float(r[k]) if r[k] else float("nan") for r in rows] for k in rows[0]}}
    return cols


runs = {{"relaxed": load("relaxed")}}
for d in DIVISORS:
    runs["dt/%d" % d] = load("rounded_%s_d%d" % (METHOD, d))
runs = {{k: v for k, v in runs.items() if v is not None}}

fig, ax = plt.subplots(2, 2, figsize=(11, 8))
for label, c in runs.items():
    style = dict(lw=2.0, color="k") if label == "relaxed" else dict(lw=1.0)
    ax[0, 0].plot(c["x1"], c["x2"], label=label, **style)
    ax[0, 1].plot(c["x1"], c["x2"], label=label, **style)
    ax[1, 1].semilogy(c["t"][:-1], c["V_N"][:-1], label=label, **style)
rel = runs.get("relaxed")
if rel is not None:
    ax[1, 0].step(rel["t"][:-1], rel["u_2"][:-1], where="post", color="k", lw=2.0, label="relaxed u_2")
for d in DIVISORS[-1:]:
    path = HERE / ("rounded_%s_d%d_fine.csv" % (METHOD, d))
    if path.exists():
        with path.open() as fh:
            fine = list(csv.DictReader(fh))
        t = [float(r["t"]) for r in fine]
        w = [1.0 if r["omega_index"] == "2" else 0.0 for r in fine]
        ax[1, 0].step(t, w, where="post", lw=0.6, label="binary, dt/%d" % d)
ax[0, 0].set_title("phase portrait")
ax[0, 1].set_title("close-up")
ax[0, 1].set_xlim(-0.05, 0.05)
ax[0, 1].set_ylim(-0.05, 0.05)
ax[1, 0].set_title("multiplier of the second control")
ax[1, 0].set_xlim(0, 3)
ax[1, 1].set_title("value function")
for a in ax.flat:
    a.legend(fontsize=7)
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else HERE / "closed_loop.png", dpi=150)
'''


def report(cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    script = out / "plot_runs.py"
    script.write_text(PLOT_TEMPLATE.format(script=script.name, divisors=list(cfg.experiment.divisors),
                                           method=cfg.experiment.rounding))
    return script


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file (defaults reproduce the benchmark)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set grid.horizon=10")
    common.add_argument("--mode", choices=["relaxed", "rounded"])
    common.add_argument("--dt-divisor", type=int, help="oversampling factor for a rounded run")
    common.add_argument("--rounding", choices=["sr", "sur"])
    common.add_argument("--steps", type=int)
    common.add_argument("--x0", type=float, nargs="+")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--repeats", type=int, help="timing repeats (minimum is kept)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mimpc", description="Mixed-integer MPC by relaxation and rounding.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-ocp", parents=[common], help="one open-loop solve at x0")
    sub.add_parser("closed-loop", parents=[common], help="one relaxed or rounded closed-loop run")
    sub.add_parser("sweep", parents=[common], help="rounded runs over all divisors plus summary.csv")
    sub.add_parser("bounds", parents=[common], help="regularity constants and admissible step width")
    sub.add_parser("report", parents=[common], help="write a plotting script for the run CSVs")
    return parser


def _flag_overrides(args) -> list[str]:
    pairs = [
        ("experiment.mode", args.mode), ("experiment.dt_divisor", args.dt_divisor),
        ("experiment.rounding", args.rounding), ("experiment.steps", args.steps),
        ("experiment.seed", args.seed), ("experiment.repeats", args.repeats),
        ("experiment.x0", args.x0), ("output_dir", str(args.out) if args.out else None),
    ]
    return [f"{k}={v!r}" if isinstance(v, str) else f"{k}={v}" for k, v in pairs if v is not None]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides + _flag_overrides(args))
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.yaml")
        if args.command == "report":
            print(report(cfg, out))
            return EXIT_OK
        try:
            problem = build_problem(cfg)
        except ContractError as exc:
            raise ConfigError("<problem>", str(exc)) from exc
        e = cfg.experiment
        if args.command == "solve-ocp":
            sol = solve_ocp(problem, e.x0, settings=cfg.solver_settings())
            print(f"J_N = {sol.cost!r}")
            print(f"V_f(x_N) = {sol.terminal_value!r}")
            print(f"u_0 = {np.array2string(sol.first, precision=6)}")
            print(f"iterations = {sol.diagnostics.iterations} ({sol.diagnostics.status})")
        elif args.command == "closed-loop":
            lg = closed_loop(problem, cfg, out, e.mode, e.dt_divisor if e.mode == "rounded" else 1, e.repeats)
            print(f"final ||x|| = {float(np.linalg.norm(lg.states[-1]))!r}")
            if lg.mode == "rounded":
                gm = gap_metrics(lg)
                print(f"sigma_max = {gm.sigma_max!r}  gamma_max = {gm.gamma_max!r}  t_r = {gm.t_r:.3f} %")
        elif args.command == "sweep":
            for r in sweep(problem, cfg, out):
                print(f"divisor {r['dt_divisor']:>3}: sigma_max={r['sigma_max']:.5f} "
                      f"gamma_max={r['gamma_max']:.5f} t_r={r['t_r_percent']:.3f}%")
            print(out / "summary.csv")
        elif args.command == "bounds":
            rep = bounds(problem, cfg, out)
            print(f"L={rep.L:.4f} M={rep.M:.4f} C={rep.C:.4f} dt_max={rep.dt_max:.6f}")
            print(out / "bounds.txt")
    except MpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
