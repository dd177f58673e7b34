"""Regularity constants, admissible oversampling width and gap metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .convexification import ControlSet
from .dynamics import OdeModel, _fd_jac
from .errors import ContractError
from .mpc import ClosedLoopLog
from .rounding import state_error_bound, theoretical_bounds

SAFETY = 1.1


@numba.njit
def _sample_fields(rhs, X, Y, V):
    s, n = X.shape
    m = V.shape[0]
    FX = np.empty((s, m, n))
    FY = np.empty((s, m, n))
    JX = np.empty((s, m, n, n))
    for k in range(s):
        for i in range(m):
            rhs(X[k], V[i], FX[k, i])
            rhs(Y[k], V[i], FY[k, i])
            _fd_jac(rhs, X[k], V[i], JX[k, i])
    return FX, FY, JX


def estimate_constants(model: OdeModel, ctrl: ControlSet, region, samples: int = 10_000, seed: int = 0):
    """Sampled estimates ``(L, M, C)`` of the field's Lipschitz constant, bound
    and time-derivative bound on an axis-aligned box, each inflated by 10 %.

    ``L`` is the larger of the sampled difference quotients over random pairs
    and the sampled Jacobian spectral norms; ``C`` bounds ``|| J f ||``, the
    derivative of the field along trajectories of a fixed control.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in region)
    if lo.shape != (model.state_dim,) or hi.shape != lo.shape or np.any(hi < lo):
        raise ContractError("region must be a nonempty box (lo, hi) in state space")
    if samples < 100:
        raise ContractError("use at least 100 samples")
    rng = np.random.default_rng(seed)
    X = lo + (hi - lo) * rng.random((samples, model.state_dim))
    Y = lo + (hi - lo) * rng.random((samples, model.state_dim))
    FX, FY, JX = _sample_fields(model.rhs, X, Y, ctrl.values)
    M = np.linalg.norm(FX, axis=-1).max()
    dist = np.linalg.norm(X - Y, axis=1)
    ok = dist > 0
    ratios = np.linalg.norm(FX - FY, axis=-1)[ok] / dist[ok, None]
    L = max(ratios.max(initial=0.0), np.linalg.norm(JX, ord=2, axis=(-2, -1)).max())
    C = np.linalg.norm(np.einsum("smij,smj->smi", JX, FX), axis=-1).max()
    return SAFETY * float(L), SAFETY * float(M), SAFETY * float(C)


def trajectory_region(states, inflate: float = 0.2, min_width: float = 1e-3):
    """Bounding box of ``states`` widened by ``inflate`` times its width."""
    states = np.asarray(states, dtype=float)
    lo, hi = states.min(axis=0), states.max(axis=0)
    pad = 0.5 * inflate * np.maximum(hi - lo, min_width)
    return lo - pad, hi + pad


def max_step_width(gamma: float, L: float, M: float, C: float, coarse_step: float, cardinality: int) -> float:
    """Largest oversampling width whose SUR state-error bound stays below ``gamma``."""
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    if min(L, M, C) < 0 or cardinality < 2:
        raise ContractError("constants must be nonnegative and cardinality >= 2")
    harmonic = math.fsum(1.0 / j for j in range(2, cardinality + 1))
    return gamma / ((M + C * coarse_step) * math.sqrt(cardinality) * harmonic * math.exp(L * coarse_step))


class GapMetrics(NamedTuple):
    sigma_max: float
    gamma_max: float
    t_r: float


def gap_metrics(log: ClosedLoopLog | Sequence[ClosedLoopLog]) -> GapMetrics:
    """Maximum integral and state gaps and the rounding/solve time ratio in percent.

    Passing several logs of the same run (timing repeats) uses the smallest
    total rounding and solve times among them.
    """
    logs = [log] if isinstance(log, ClosedLoopLog) else list(log)
    if not logs or any(lg.mode != "rounded" for lg in logs):
        raise ContractError("gap metrics need rounded-mode logs")
    first = logs[0]
    if first.n_steps == 0:
        return GapMetrics(0.0, 0.0, 0.0)
    round_time = min(sum(lg.round_times) for lg in logs)
    solve_time = min(sum(lg.solve_times) for lg in logs)
    t_r = 100.0 * round_time / solve_time if solve_time > 0 else 0.0
    return GapMetrics(float(max(first.sigmas)), float(max(first.gammas)), t_r)


@dataclass
class BoundsReport:
    L: float
    M: float
    C: float
    region: tuple
    coarse_step: float
    n_os: int
    cardinality: int
    gamma: float
    sigma_sr: float = field(init=False)
    sigma_sur: float = field(init=False)
    state_bound: float = field(init=False)
    dt_max: float = field(init=False)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        dt = self.coarse_step / self.n_os
        b = theoretical_bounds(self.cardinality, dt, self.n_os)
        self.sigma_sr, self.sigma_sur = b.sigma_sr, b.sigma_sur
        self.state_bound = state_error_bound(self.M, self.C, self.L, self.coarse_step, self.sigma_sur)
        self.dt_max = max_step_width(self.gamma, self.L, self.M, self.C, self.coarse_step, self.cardinality)

    def as_dict(self) -> dict:
        d = {
            "L": self.L, "M": self.M, "C": self.C,
            "region_lo": list(map(float, self.region[0])), "region_hi": list(map(float, self.region[1])),
            "coarse_step": self.coarse_step, "n_os": self.n_os, "fine_step": self.coarse_step / self.n_os,
            "cardinality": self.cardinality, "sigma_SR": self.sigma_sr, "sigma_SUR": self.sigma_sur,
            "state_bound": self.state_bound, "gamma": self.gamma, "dt_max": self.dt_max,
        }
        d.update(self.extras)
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, np.ndarray):
                value = value.tolist()
            lines.append(f"{key} = {value!r}")
        path.write_text("\n".join(lines) + "\n")
        return path


def read_report(path) -> dict:
    import ast

    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            out[key.strip()] = ast.literal_eval(value.strip())
    return out


def sublevel_excursion(log: ClosedLoopLog, reference: float | None = None) -> float:
    """Largest ratio ``V_N(x_n) / V_N(x_0)`` along a run (1.0 means never above the start)."""
    values = np.asarray(log.values)
    ref = values[0] if reference is None else reference
    if ref <= 0:
        return 0.0 if values.max(initial=0.0) <= 0 else math.inf
    return float(values.max() / ref)


class PracticalStabilityRow(NamedTuple):
    divisor: int
    fine_step: float
    dt_max: float
    admissible: bool
    max_ratio: float
    inside: bool


def practical_stability_check(logs: dict[int, ClosedLoopLog], L, M, C, gamma, coarse_step, cardinality):
    """For each rounded run, compare its fine step to ``dt_max(gamma)`` and record
    whether the run stayed in ``{V_N <= V_N(x0)}``."""
    dt_max = max_step_width(gamma, L, M, C, coarse_step, cardinality)
    rows = []
    for divisor, lg in sorted(logs.items()):
        ratio = sublevel_excursion(lg)
        dt = coarse_step / divisor
        rows.append(PracticalStabilityRow(divisor, dt, dt_max, dt <= dt_max, ratio, ratio <= 1.0 + 1e-12))
    return rows
