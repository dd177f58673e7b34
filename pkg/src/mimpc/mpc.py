"""Receding-horizon drivers for the relaxed and the rounded closed loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convexification import control_cost, state_cost
from .dynamics import rollout
from .errors import ContractError, MpcError
from .nlp import OcpSolution, SolverSettings, solve_ocp
from .ocp import OcpProblem, evaluate_cost, terminal_control_law
from .rounding import Method, RoundingResult, integral_gap, round_control

log = logging.getLogger(__name__)


def warm_start_shift(prev: OcpSolution, problem: OcpProblem) -> np.ndarray:
    """Shift the previous optimal sequence and append the terminal law at its end state."""
    if len(prev.multipliers) == 0:
        return prev.multipliers.copy()
    term = problem.terminal
    tail = terminal_control_law(term.K, term.u_ref, prev.states[-1])
    return np.vstack([prev.multipliers[1:], tail[None, :]])


@dataclass
class StepRecord:
    x: np.ndarray
    x_next: np.ndarray
    mu: np.ndarray
    value: float
    warm_cost: float
    stage_cost: float
    solution: OcpSolution
    solve_time: float
    rounding: RoundingResult | None = None
    sigma: float = 0.0
    gamma: float = 0.0
    round_time: float = 0.0


class MpcController:
    """Warm-started MPC for the relaxed problem, with optional rounding.

    The warm start (shifted sequence plus terminal law) and the terminal
    multiplier of the augmented Lagrangian are the only state carried
    between steps; :meth:`reset` restores the initial state.
    """

    def __init__(self, problem: OcpProblem, settings: SolverSettings | None = None,
                 carry_deficit: bool = False, repeats: int = 1):
        self.problem = problem
        self.settings = settings or SolverSettings()
        self.carry_deficit = carry_deficit
        # solves and roundings are deterministic; repeats only sharpen the timings
        self.repeats = max(1, int(repeats))
        self.reset()

    def reset(self):
        self.warm = self.problem.reference_sequence()
        self.lam = 0.0
        self.deficit = None

    def _successor(self, x, omega, substeps):
        p = self.problem
        return rollout(p.model, p.ctrl.values, x, omega, p.grid.integration_step, substeps)

    def _solve(self, x) -> tuple[OcpSolution, float, float]:
        p = self.problem
        warm_cost = evaluate_cost(p, x, self.warm)[0]
        elapsed = math.inf
        for _ in range(self.repeats):
            t0 = time.perf_counter()
            sol = solve_ocp(p, x, self.warm, self.settings, lam0=self.lam)
            elapsed = min(elapsed, time.perf_counter() - t0)
        self.warm = warm_start_shift(sol, p)
        self.lam = sol.diagnostics.multiplier
        return sol, elapsed, warm_cost

    def _stage(self, x, mu) -> float:
        p = self.problem
        return float(state_cost(p.Q, x) + control_cost(p.ctrl, p.variant, mu))

    def relaxed_step(self, x) -> StepRecord:
        x = np.asarray(x, dtype=float)
        sol, elapsed, warm_cost = self._solve(x)
        mu = sol.first.copy()
        x_next = self._successor(x, mu[None, :], self.problem.grid.coarse_substeps)[-1].copy()
        return StepRecord(x, x_next, mu, sol.cost, warm_cost, self._stage(x, mu), sol, elapsed)

    def rounded_step(self, x, n_os: int, method: Method = "sur") -> StepRecord:
        """Solve, round the first multiplier on ``n_os`` fine intervals and simulate."""
        x = np.asarray(x, dtype=float)
        grid = self.problem.grid.with_oversampling(n_os)
        sol, elapsed, warm_cost = self._solve(x)
        mu = sol.first.copy()
        carry = self.deficit if self.carry_deficit else None
        round_time = math.inf
        for _ in range(self.repeats):
            t0 = time.perf_counter()
            rnd = round_control(mu, n_os, grid.fine_step, method, carry)
            round_time = min(round_time, time.perf_counter() - t0)
        if self.carry_deficit:
            self.deficit = rnd.deficit
        x_next = self._successor(x, rnd.omega, grid.fine_substeps)[-1].copy()
        x_relaxed = self._successor(x, mu[None, :], grid.coarse_substeps)[-1]
        return StepRecord(
            x, x_next, mu, sol.cost, warm_cost, self._stage(x, mu), sol, elapsed,
            rounding=rnd,
            sigma=integral_gap(mu, rnd.omega, grid.fine_step),
            gamma=float(np.linalg.norm(x_next - x_relaxed)),
            round_time=round_time,
        )


@dataclass
class ClosedLoopLog:
    """Per-step record of one closed-loop run.

    ``states`` has one more row than the per-step arrays (the final state).
    """

    mode: str
    coarse_step: float
    n_os: int = 1
    method: str = ""
    states: list = field(default_factory=list)
    mus: list = field(default_factory=list)
    values: list = field(default_factory=list)
    warm_costs: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    round_times: list = field(default_factory=list)
    fine_indices: list = field(default_factory=list)
    failed_step: int | None = None
    error: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.values)

    @property
    def fine_step(self) -> float:
        return self.coarse_step / self.n_os

    def append(self, rec: StepRecord):
        if not self.states:
            self.states.append(rec.x)
        self.states.append(rec.x_next)
        self.mus.append(rec.mu)
        self.values.append(rec.value)
        self.warm_costs.append(rec.warm_cost)
        self.stage_costs.append(rec.stage_cost)
        self.sigmas.append(rec.sigma)
        self.gammas.append(rec.gamma)
        self.iterations.append(rec.solution.diagnostics.iterations)
        self.solve_times.append(rec.solve_time)
        self.round_times.append(rec.round_time)
        if rec.rounding is not None:
            self.fine_indices.append(rec.rounding.indices.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "states": np.array(self.states),
            "mus": np.array(self.mus),
            "values": np.array(self.values),
            "stage_costs": np.array(self.stage_costs),
            "sigmas": np.array(self.sigmas),
            "gammas": np.array(self.gammas),
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        states = np.array(self.states)
        n_x = states.shape[1] if states.size else 0
        n_u = len(self.mus[0]) if self.mus else 0
        header = (
            ["step", "t"] + [f"x{j + 1}" for j in range(n_x)] + ["V_N", "J_N"]
            + [f"u_{i + 1}" for i in range(n_u)]
            + ["sigma_step", "gamma_step", "solver_iters", "solve_ms", "round_us"]
        )
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for n in range(len(states)):
                row = [n, repr(n * self.coarse_step)] + [repr(float(v)) for v in states[n]]
                if n < self.n_steps:
                    row += [repr(float(self.values[n])), repr(float(self.warm_costs[n]))]
                    row += [repr(float(v)) for v in self.mus[n]]
                    row += [
                        repr(float(self.sigmas[n])), repr(float(self.gammas[n])), self.iterations[n],
                        f"{1e3 * self.solve_times[n]:.4f}", f"{1e6 * self.round_times[n]:.3f}",
                    ]
                else:
                    row += [""] * (len(header) - len(row))
                w.writerow(row)
        return path

    def fine_to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dt = self.fine_step
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "t", "omega_index"])
            m = 0
            for n, idx in enumerate(self.fine_indices):
                for j, i in enumerate(idx):
                    w.writerow([m, repr(n * self.coarse_step + j * dt), int(i) + 1])
                    m += 1
        return path


class ClosedLoopError(MpcError):
    """A closed-loop step failed; the partial log is attached."""

    def __init__(self, step: int, cause: Exception, partial: ClosedLoopLog):
        self.step = step
        self.cause = cause
        self.partial = partial
        super().__init__(f"closed loop failed at step {step}: {cause}")


def run_closed_loop(
    problem: OcpProblem,
    x0,
    n_steps: int,
    mode: str = "relaxed",
    n_os: int = 1,
    method: Method = "sur",
    settings: SolverSettings | None = None,
    carry_deficit: bool = False,
    repeats: int = 1,
) -> ClosedLoopLog:
    """Iterate the relaxed or rounded closed loop from ``x0``.

    ``repeats`` re-times every solve and rounding and keeps the minimum.
    """
    if mode not in ("relaxed", "rounded"):
        raise ContractError(f"unknown mode {mode!r}")
    ctl = MpcController(problem, settings, carry_deficit, repeats)
    out = ClosedLoopLog(mode, problem.grid.coarse_step, n_os if mode == "rounded" else 1, method if mode == "rounded" else "")
    x = np.asarray(x0, dtype=float)
    for n in range(n_steps):
        try:
            rec = ctl.relaxed_step(x) if mode == "relaxed" else ctl.rounded_step(x, n_os, method)
        except MpcError as exc:
            out.failed_step, out.error = n, str(exc)
            if not out.states:
                out.states.append(x)
            raise ClosedLoopError(n, exc, out) from exc
        out.append(rec)
        x = rec.x_next
    if not out.states:
        out.states.append(x)
    return out
