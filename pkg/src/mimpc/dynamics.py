"""Continuous-time models, the explicit midpoint integrator and the
outer-convexified maps on the coarse and oversampling grids.

Models are written as numba-compiled functions with the in-place signature
``rhs(x, v, out)`` (and optionally ``jac(x, v, out)`` for the state Jacobian),
so the integrator loops run without Python overhead. Register custom models
with :func:`make_model` or :func:`register_model`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .convexification import ControlSet, check_simplex
from .errors import ContractError, IntegrationOverflowError

DEFAULT_INTEGRATION_STEP = 0.005


# -- numba kernels -----------------------------------------------------------


@numba.njit
def _convex_field(rhs, x, V, u, tmp, out):
    n = x.shape[0]
    for j in range(n):
        out[j] = 0.0
    for i in range(V.shape[0]):
        if u[i] == 0.0:
            continue
        rhs(x, V[i], tmp)
        for j in range(n):
            out[j] += u[i] * tmp[j]


@numba.njit
def _rollout(rhs, x0, U, V, h, substeps):
    # one row of U per control interval, each held for `substeps` midpoint steps
    N = U.shape[0]
    n = x0.shape[0]
    traj = np.empty((N * substeps + 1, n))
    traj[0] = x0
    x = x0.copy()
    xm = np.empty(n)
    k = np.empty(n)
    tmp = np.empty(n)
    for kk in range(N):
        u = U[kk]
        for s in range(substeps):
            _convex_field(rhs, x, V, u, tmp, k)
            for j in range(n):
                xm[j] = x[j] + 0.5 * h * k[j]
            _convex_field(rhs, xm, V, u, tmp, k)
            ok = True
            for j in range(n):
                x[j] = x[j] + h * k[j]
                if not np.isfinite(x[j]):
                    ok = False
            idx = kk * substeps + s
            traj[idx + 1] = x
            if not ok:
                return traj, idx
    return traj, -1


@numba.njit
def _fd_jac(rhs, x, v, out):
    n = x.shape[0]
    xp = x.copy()
    fp = np.empty(n)
    fm = np.empty(n)
    for c in range(n):
        eps = 1e-6 * max(1.0, abs(x[c]))
        xp[c] = x[c] + eps
        rhs(xp, v, fp)
        xp[c] = x[c] - eps
        rhs(xp, v, fm)
        xp[c] = x[c]
        for r in range(n):
            out[r, c] = (fp[r] - fm[r]) / (2.0 * eps)


@numba.njit
def _jac_t_vec(rhs, jac, has_jac, x, V, u, w, Jbuf, out):
    # out = sum_i u_i J_i(x)^T w
    n = x.shape[0]
    for j in range(n):
        out[j] = 0.0
    for i in range(V.shape[0]):
        if u[i] == 0.0:
            continue
        if has_jac:
            jac(x, V[i], Jbuf)
        else:
            _fd_jac(rhs, x, V[i], Jbuf)
        for c in range(n):
            acc = 0.0
            for r in range(n):
                acc += Jbuf[r, c] * w[r]
            out[c] += u[i] * acc


@numba.njit
def _rollout_vjp(rhs, jac, has_jac, traj, U, V, h, substeps, node_bar):
    """Reverse pass of :func:`_rollout`.

    ``node_bar[k]`` is the cotangent of the state at coarse node ``k``.
    Returns the cotangent of ``x0`` and the gradient with respect to ``U``.
    """
    N, m = U.shape
    n = traj.shape[1]
    gU = np.zeros((N, m))
    lam = node_bar[N].copy()
    k1 = np.empty(n)
    xm = np.empty(n)
    a = np.empty(n)
    b = np.empty(n)
    tmp = np.empty(n)
    fx = np.empty(n)
    Jbuf = np.empty((n, n))
    for kk in range(N - 1, -1, -1):
        u = U[kk]
        for s in range(substeps - 1, -1, -1):
            x = traj[kk * substeps + s]
            _convex_field(rhs, x, V, u, tmp, k1)
            for j in range(n):
                xm[j] = x[j] + 0.5 * h * k1[j]
            _jac_t_vec(rhs, jac, has_jac, xm, V, u, lam, Jbuf, a)
            for j in range(n):
                a[j] *= h
            for i in range(m):
                rhs(xm, V[i], fx)
                rhs(x, V[i], tmp)
                acc = 0.0
                for j in range(n):
                    acc += h * fx[j] * lam[j] + 0.5 * h * tmp[j] * a[j]
                gU[kk, i] += acc
            _jac_t_vec(rhs, jac, has_jac, x, V, u, a, Jbuf, b)
            for j in range(n):
                lam[j] = lam[j] + a[j] + 0.5 * h * b[j]
        for j in range(n):
            lam[j] += node_bar[kk, j]
    return lam, gU


@numba.njit
def _no_jac(x, v, out):  # placeholder for models without an analytic Jacobian
    out[:, :] = np.nan


# -- models ------------------------------------------------------------------


@dataclass(frozen=True)
class OdeModel:
    """A controlled vector field ``dx/dt = f(x, v)``.

    ``rhs`` and ``jac`` are numba-compiled in-place functions. ``x_ref`` and
    ``v_ref`` optionally declare a steady state with ``f(x_ref, v_ref) = 0``.
    """

    name: str
    state_dim: int
    input_dim: int
    rhs: Callable
    jac: Callable | None = None
    x_ref: np.ndarray | None = None
    v_ref: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def has_jacobian(self) -> bool:
        return self.jac is not None

    def _jac_fn(self):
        return self.jac if self.jac is not None else _no_jac


def make_model(name, state_dim, input_dim, rhs, jac=None, x_ref=None, v_ref=None, params=None) -> OdeModel:
    """Build an :class:`OdeModel`, compiling plain Python functions with numba."""
    if not isinstance(rhs, numba.core.registry.CPUDispatcher):
        rhs = numba.njit(rhs)
    if jac is not None and not isinstance(jac, numba.core.registry.CPUDispatcher):
        jac = numba.njit(jac)
    if x_ref is not None:
        x_ref = np.asarray(x_ref, dtype=float)
    if v_ref is not None:
        v_ref = np.atleast_1d(np.asarray(v_ref, dtype=float))
    model = OdeModel(name, int(state_dim), int(input_dim), rhs, jac, x_ref, v_ref, dict(params or {}))
    if x_ref is not None and v_ref is not None:
        f = eval_vector_field(model, x_ref, v_ref)
        if np.linalg.norm(f) > 1e-12:
            raise ContractError(f"declared steady state of {name!r} is not an equilibrium: f = {f}")
    return model


def _vdp_factory(mu: float = 1.0):
    @numba.njit
    def rhs(x, v, out):
        out[0] = x[1]
        out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0] + np.sin(v[0])

    @numba.njit
    def jac(x, v, out):
        out[0, 0] = 0.0
        out[0, 1] = 1.0
        out[1, 0] = -2.0 * mu * x[0] * x[1] - 1.0
        out[1, 1] = mu * (1.0 - x[0] * x[0])

    return rhs, jac


def vanderpol(mu: float = 1.0) -> OdeModel:
    """Van der Pol oscillator with the nonlinear input ``sin(v)``."""
    rhs, jac = _vdp_factory(float(mu))
    return make_model("vanderpol", 2, 1, rhs, jac, x_ref=np.zeros(2), v_ref=np.zeros(1), params={"mu": float(mu)})


_REGISTRY: dict[str, Callable[..., OdeModel]] = {"vanderpol": vanderpol}


def register_model(name: str, factory: Callable[..., OdeModel]) -> None:
    _REGISTRY[name] = factory


def get_model(name: str, **params) -> OdeModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(**params)


# -- grids and trajectories --------------------------------------------------


def _exact_ratio(num: float, den: float, what: str) -> int:
    r = num / den
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * max(1.0, r):
        raise ContractError(f"{what}: {num} is not an integer multiple of {den}")
    return k


@dataclass(frozen=True)
class GridSpec:
    """Coarse control grid, oversampling factor and integrator substep."""

    coarse_step: float
    horizon: int
    oversample_factor: int = 1
    integration_step: float = DEFAULT_INTEGRATION_STEP

    def __post_init__(self):
        if not self.coarse_step > 0 or not self.integration_step > 0:
            raise ContractError("grid steps must be positive")
        if self.horizon < 0 or self.oversample_factor < 1:
            raise ContractError("horizon must be >= 0 and oversample factor >= 1")
        # validates both divisibility conditions
        _exact_ratio(self.fine_step, self.integration_step, "fine step")

    @property
    def fine_step(self) -> float:
        return self.coarse_step / self.oversample_factor

    @property
    def coarse_substeps(self) -> int:
        return _exact_ratio(self.coarse_step, self.integration_step, "coarse step")

    @property
    def fine_substeps(self) -> int:
        return _exact_ratio(self.fine_step, self.integration_step, "fine step")

    @property
    def final_time(self) -> float:
        return self.horizon * self.coarse_step

    def with_oversampling(self, factor: int) -> "GridSpec":
        return GridSpec(self.coarse_step, self.horizon, factor, self.integration_step)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ContractError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ContractError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# -- public operations -------------------------------------------------------


def _state(model: OdeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (model.state_dim,):
        raise ContractError(f"{model.name}: state must have length {model.state_dim}, got {x.shape}")
    return x


def _control(model: OdeModel, v) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)
    if v.shape != (model.input_dim,):
        raise ContractError(f"{model.name}: control must have length {model.input_dim}, got {v.shape}")
    return v


def eval_vector_field(model: OdeModel, x, v) -> np.ndarray:
    x = _state(model, x)
    v = _control(model, v)
    out = np.empty(model.state_dim)
    model.rhs(x, v, out)
    return out


def eval_jacobian(model: OdeModel, x, v) -> np.ndarray:
    """State Jacobian of the vector field (analytic if provided, else central differences)."""
    x = _state(model, x)
    v = _control(model, v)
    out = np.empty((model.state_dim, model.state_dim))
    if model.jac is not None:
        model.jac(x, v, out)
    else:
        _fd_jac(model.rhs, x, v, out)
    return out


def rollout(model: OdeModel, values: np.ndarray, x0: np.ndarray, U: np.ndarray, h: float, substeps: int) -> np.ndarray:
    """Integrate under piecewise-constant multipliers; returns every substep state.

    Row ``k`` of ``U`` is held for ``substeps`` midpoint steps of size ``h``.
    The result has ``len(U) * substeps + 1`` rows.
    """
    traj, bad = _rollout(model.rhs, x0, np.ascontiguousarray(U, dtype=float), values, float(h), int(substeps))
    if bad >= 0:
        raise IntegrationOverflowError(int(bad))
    return traj


def rollout_vjp(model, values, traj, U, h, substeps, node_bar):
    """Adjoint of :func:`rollout` given cotangents at the coarse nodes."""
    return _rollout_vjp(
        model.rhs, model._jac_fn(), model.has_jacobian, traj,
        np.ascontiguousarray(U, dtype=float), values, float(h), int(substeps),
        np.ascontiguousarray(node_bar, dtype=float),
    )


def _check_steps(h: float, substeps: int):
    if not h > 0:
        raise ContractError(f"step must be positive, got {h}")
    if int(substeps) != substeps or substeps < 1:
        raise ContractError(f"substeps must be a positive integer, got {substeps}")


def integrate_step(model: OdeModel, x, v, h: float, substeps: int = 1) -> np.ndarray:
    """Advance ``x`` by ``h`` under constant ``v`` with ``substeps`` midpoint steps."""
    _check_steps(h, substeps)
    x = _state(model, x)
    V = _control(model, v)[None, :]
    traj = rollout(model, V, x, np.ones((1, 1)), h / substeps, substeps)
    return traj[-1].copy()


def convexified_map(model: OdeModel, ctrl: ControlSet, x, u, h: float, substeps: int = 1) -> np.ndarray:
    """Integrate ``sum_i f(x, v_i) u_i`` over ``[0, h]`` from ``x``."""
    _check_steps(h, substeps)
    x = _state(model, x)
    u = check_simplex(u)
    if u.shape != (ctrl.cardinality,):
        raise ContractError(f"multiplier must have length {ctrl.cardinality}")
    traj = rollout(model, ctrl.values, x, u[None, :], h / substeps, substeps)
    return traj[-1].copy()


def simulate_oversampled(model: OdeModel, ctrl: ControlSet, x, omega_seq, dt: float, substeps: int = 1) -> Trajectory:
    """Apply one multiplier per fine interval of width ``dt``.

    ``substeps`` midpoint steps are taken per fine interval. Relaxed
    multipliers are accepted, so a constant relaxed sequence reproduces
    :func:`convexified_map` over ``len(omega_seq) * dt``.
    """
    _check_steps(dt, substeps)
    x = _state(model, x)
    omega = np.asarray(omega_seq, dtype=float).reshape(-1, ctrl.cardinality)
    if len(omega) == 0:
        return Trajectory(np.zeros(1), x[None, :].copy())
    check_simplex(omega)
    traj = rollout(model, ctrl.values, x, omega, dt / substeps, substeps)
    nodes = traj[::substeps].copy()
    return Trajectory(dt * np.arange(len(omega) + 1), nodes)
