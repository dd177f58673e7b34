"""Integer reconstruction of a relaxed multiplier on the oversampling grid.

A relaxed multiplier ``u`` is held constant over one coarse interval, which is
split into ``n_os`` fine intervals of width ``dt``. Simple rounding (SR) repeats
the argmax decision; sum-up rounding (SUR) activates, on every fine interval,
the control with the largest accumulated deficit

    eta_i(m) = (m + 1) dt u_i - dt * #{j < m : omega_j = e_i}.

Activation counts are integers, so the deficits are evaluated exactly from
the counts instead of being accumulated step by step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numba
import numpy as np

from .convexification import check_simplex
from .errors import ContractError

Method = Literal["sr", "sur"]


@numba.njit("int64[:](float64[:], int64, float64[:])", cache=True)
def _sur_indices(u, n_os, carry):
    # carry is the deficit left over from earlier intervals, in units of dt
    m = u.shape[0]
    counts = np.zeros(m)
    idx = np.empty(n_os, dtype=np.int64)
    for k in range(n_os):
        best = 0
        best_eta = carry[0] + (k + 1) * u[0] - counts[0]
        for i in range(1, m):
            eta = carry[i] + (k + 1) * u[i] - counts[i]
            if eta > best_eta:
                best, best_eta = i, eta
        idx[k] = best
        counts[best] += 1.0
    return idx


def sur_indices(u: np.ndarray, n_os: int, carry: np.ndarray | None = None) -> np.ndarray:
    """Active index per fine interval chosen by SUR (lowest index wins ties)."""
    if carry is None:
        carry = np.zeros_like(u)
    return _sur_indices(np.asarray(u, dtype=float), int(n_os), np.asarray(carry, dtype=float))


def sr_indices(u: np.ndarray, n_os: int) -> np.ndarray:
    return np.full(int(n_os), int(np.argmax(u)), dtype=np.int64)


@dataclass(frozen=True)
class RoundingResult:
    """Binary multipliers ``omega`` (one row per fine interval) for ``u``."""

    u: np.ndarray
    indices: np.ndarray
    dt: float
    method: str
    deficit: np.ndarray

    @property
    def omega(self) -> np.ndarray:
        om = np.zeros((len(self.indices), len(self.u)))
        om[np.arange(len(self.indices)), self.indices] = 1.0
        return om

    @property
    def sigma(self) -> float:
        return integral_gap(self.u, self.omega, self.dt)


def _validate(u, n_os, dt):
    u = check_simplex(u)
    if u.ndim != 1:
        raise ContractError("expected a single multiplier")
    if int(n_os) != n_os or n_os < 1:
        raise ContractError(f"oversampling factor must be a positive integer, got {n_os}")
    if not dt > 0:
        raise ContractError("fine step must be positive")
    return u


def simple_rounding(u, n_os: int, dt: float = 1.0) -> RoundingResult:
    u = _validate(u, n_os, dt)
    idx = sr_indices(u, n_os)
    deficit = dt * (n_os * u - np.bincount(idx, minlength=len(u)))
    return RoundingResult(u, idx, float(dt), "sr", deficit)


def sum_up_rounding(u, n_os: int, dt: float = 1.0, carry=None) -> RoundingResult:
    """SUR on ``n_os`` fine intervals of width ``dt``.

    ``carry`` is an optional deficit (in seconds) inherited from the previous
    coarse interval; the remaining deficit is returned in ``result.deficit``.
    """
    u = _validate(u, n_os, dt)
    c = np.zeros_like(u) if carry is None else np.asarray(carry, dtype=float) / dt
    idx = sur_indices(u, n_os, c)
    deficit = dt * (c + n_os * u - np.bincount(idx, minlength=len(u)))
    return RoundingResult(u, idx, float(dt), "sur", deficit)


def round_control(u, n_os: int, dt: float, method: Method = "sur", carry=None) -> RoundingResult:
    if method == "sur":
        return sum_up_rounding(u, n_os, dt, carry)
    if method == "sr":
        return simple_rounding(u, n_os, dt)
    raise ContractError(f"unknown rounding method {method!r}")


def integral_gap(u, omega_seq, dt: float) -> float:
    """``sup_t || int_0^t (u - omega(s)) ds ||`` over one coarse interval.

    The running integral is piecewise linear, so its norm peaks at grid points.
    """
    u = np.asarray(u, dtype=float)
    omega = np.asarray(omega_seq, dtype=float).reshape(-1, len(u))
    counts = np.cumsum(omega, axis=0)
    m = np.arange(1, len(omega) + 1)[:, None]
    running = dt * (m * u - counts)
    if len(running) == 0:
        return 0.0
    return float(np.max(np.linalg.norm(running, axis=1)))


class RoundingBounds(NamedTuple):
    sigma_sr: float
    sigma_sur: float


def theoretical_bounds(cardinality: int, dt: float, n_os: int) -> RoundingBounds:
    """Worst-case integral gaps of SR and SUR (Euclidean norm)."""
    if cardinality < 2 or n_os < 1:
        raise ContractError("need cardinality >= 2 and n_os >= 1")
    root = math.sqrt(cardinality)
    sigma_sr = n_os * root * dt * (1.0 - 1.0 / cardinality)
    top = min(cardinality, n_os + 1)
    sigma_sur = root * dt * math.fsum(1.0 / i for i in range(2, top + 1))
    return RoundingBounds(sigma_sr, sigma_sur)


def state_error_bound(M: float, C: float, L: float, coarse_step: float, sigma: float) -> float:
    """Groenwall-type bound ``(M + C dt) sigma exp(L dt)`` on the state gap."""
    if min(M, C, L, sigma) < 0:
        raise ContractError("constants must be nonnegative")
    return (M + C * coarse_step) * sigma * math.exp(L * coarse_step)
