"""Finite control sets, simplex multipliers and stage costs on multipliers.

Multipliers are plain 1-d numpy arrays of length ``|Omega|`` (or 2-d arrays
with one multiplier per row). A relaxed multiplier lives on the unit simplex;
a binary one is a unit vector (SOS1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ContractError, SimplexInfeasibleError

SIMPLEX_TOL = 1e-9

CostKind = Literal["linear", "absolute", "quadratic"]
COST_KINDS = ("linear", "absolute", "quadratic")


@dataclass(frozen=True)
class ControlSet:
    """Finite control set with quadratic per-element cost ``l_v(v) = v' R_v v``.

    ``values`` has shape ``(|Omega|, n_v)``; ``cost_row[i] = l_v(values[i])``.
    """

    values: np.ndarray
    weight: np.ndarray
    cost_row: np.ndarray = field(init=False)

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] == 1 and values.shape[1] > 1 and np.ndim(self.values) == 1:
            # a flat list of scalar controls
            values = values.T
        weight = np.atleast_2d(np.asarray(self.weight, dtype=float))
        if values.shape[0] < 2:
            raise ContractError("a control set needs at least two elements")
        if weight.shape != (values.shape[1], values.shape[1]):
            raise ContractError(f"weight must be {values.shape[1]}x{values.shape[1]}, got {weight.shape}")
        if not np.allclose(weight, weight.T):
            raise ContractError("control weight must be symmetric")
        if np.any(np.linalg.eigvalsh(weight) < 0):
            raise ContractError("control weight must be positive semidefinite")
        for i in range(len(values)):
            for j in range(i):
                if np.array_equal(values[i], values[j]):
                    raise ContractError(f"control values {j} and {i} coincide")
        cost_row = np.einsum("ij,jk,ik->i", values, weight, values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "cost_row", cost_row)

    @property
    def cardinality(self) -> int:
        return self.values.shape[0]

    @property
    def input_dim(self) -> int:
        return self.values.shape[1]

    def control_cost(self, v) -> float:
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return float(v @ self.weight @ v)


@dataclass(frozen=True)
class CostVariant:
    """How the control part of the stage cost acts on a multiplier.

    * ``linear``:    ``R u``
    * ``absolute``:  ``R |u - u_ref|``
    * ``quadratic``: ``sum_i R_i (u_i - u_ref_i)^2``
    """

    kind: CostKind
    u_ref: np.ndarray

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ContractError(f"unknown cost variant {self.kind!r}")
        u_ref = np.asarray(self.u_ref, dtype=float)
        check_simplex(u_ref)
        object.__setattr__(self, "u_ref", u_ref)


def unit(j: int, size: int) -> np.ndarray:
    e = np.zeros(size)
    e[j] = 1.0
    return e


def check_simplex(u, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate ``u`` (one multiplier or one per row) and return it as an array."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise SimplexInfeasibleError("multiplier has non-finite entries")
    if np.any(u < -tol) or np.any(u > 1 + tol):
        raise SimplexInfeasibleError(f"multiplier entries outside [0, 1]: {u}")
    if np.any(np.abs(u.sum(axis=-1) - 1.0) > tol):
        raise SimplexInfeasibleError(f"multiplier does not sum to one: {u}")
    return u


def is_feasible(u, tol: float = SIMPLEX_TOL) -> bool:
    try:
        check_simplex(u, tol)
    except SimplexInfeasibleError:
        return False
    return True


def is_binary(u, tol: float = SIMPLEX_TOL) -> bool:
    u = np.asarray(u, dtype=float)
    if not is_feasible(u, tol):
        return False
    return bool(np.all((np.abs(u) <= tol) | (np.abs(u - 1.0) <= tol)))


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-and-threshold).

    Works row-wise on 2-d input. Feasible rows are returned unchanged.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return project_simplex(y[None, :])[0]
    if not np.all(np.isfinite(y)):
        raise ContractError("cannot project non-finite vector")
    out = y.copy()
    todo = ~(np.all(y >= 0.0, axis=1) & (np.abs(y.sum(axis=1) - 1.0) <= 1e-12))
    if not todo.any():
        return out
    Y = y[todo]
    s = -np.sort(-Y, axis=1)
    css = np.cumsum(s, axis=1) - 1.0
    k = np.arange(1, Y.shape[1] + 1)
    active = s - css / k > 0
    # index of the last active entry in each row
    rho = Y.shape[1] - 1 - np.argmax(active[:, ::-1], axis=1)
    theta = css[np.arange(len(Y)), rho] / (rho + 1)
    X = np.maximum(Y - theta[:, None], 0.0)
    out[todo] = X / X.sum(axis=1, keepdims=True)
    return out


def control_cost(ctrl: ControlSet, variant: CostVariant, u) -> float | np.ndarray:
    """Control part ``l_u(u)``; vectorized over rows of ``u``."""
    u = np.asarray(u, dtype=float)
    R = ctrl.cost_row
    if variant.kind == "linear":
        return u @ R
    d = u - variant.u_ref
    if variant.kind == "absolute":
        return np.abs(d) @ R
    return (d * d) @ R


def control_cost_grad(ctrl: ControlSet, variant: CostVariant, u) -> np.ndarray:
    """Gradient of :func:`control_cost`; ``sign(0) = 0`` for the absolute variant."""
    u = np.asarray(u, dtype=float)
    R = ctrl.cost_row
    if variant.kind == "linear":
        return np.broadcast_to(R, u.shape).copy()
    d = u - variant.u_ref
    if variant.kind == "absolute":
        return np.sign(d) * R
    return 2.0 * d * R


def state_cost(Q: np.ndarray, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.einsum("...i,ij,...j->...", x, Q, x)


def stage_cost(ctrl: ControlSet, variant: CostVariant, x, u, Q) -> float:
    """``l(x, u) = x' Q x + l_u(u)``."""
    return float(state_cost(np.asarray(Q, dtype=float), x) + control_cost(ctrl, variant, u))


def bijection_check(ctrl: ControlSet, omega) -> np.ndarray:
    """Map a binary multiplier back to its control value."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (ctrl.cardinality,):
        raise ContractError(f"expected multiplier of length {ctrl.cardinality}")
    if not is_binary(omega):
        raise SimplexInfeasibleError(f"relaxed multiplier {omega} has no control value")
    return ctrl.values[int(np.argmax(omega))].copy()
