"""Terminal ingredients and finite-horizon cost evaluation.

The steady state is assumed to sit at the origin of the state space, so the
state and terminal costs are ``x' Q x`` and ``x' P x``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .convexification import (
    ControlSet,
    CostVariant,
    check_simplex,
    control_cost,
    project_simplex,
    state_cost,
)
from .dynamics import GridSpec, OdeModel, convexified_map, rollout
from .errors import ContractError, StabilizabilityError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal weight ``P``, level ``pi`` of the terminal set and the LQR gain."""

    P: np.ndarray
    pi: float
    K: np.ndarray
    rho: float
    W: np.ndarray
    u_ref: np.ndarray

    def __post_init__(self):
        if not self.pi > 0:
            raise ContractError("terminal level pi must be positive")
        if self.rho < 1:
            raise ContractError("rho must be >= 1")
        if np.linalg.eigvalsh(0.5 * (self.P + self.P.T)).min() <= 0:
            raise ContractError("terminal weight P must be positive definite")


@dataclass(frozen=True)
class OcpProblem:
    """Everything DT-OCP needs except the initial state."""

    model: OdeModel
    ctrl: ControlSet
    variant: CostVariant
    Q: np.ndarray
    terminal: TerminalIngredients
    grid: GridSpec

    @property
    def horizon(self) -> int:
        return self.grid.horizon

    def reference_sequence(self) -> np.ndarray:
        return np.tile(self.variant.u_ref, (self.horizon, 1))


def linearize(model: OdeModel, ctrl: ControlSet, x_ref, u_ref, dt: float, substeps: int = 1, eps: float = 1e-6):
    """Jacobians ``(A, B)`` of ``(x, u) -> F(x) u`` at a steady state.

    ``B`` has one column per control set element and is taken in raw
    multiplier coordinates (each ``u_i`` perturbed on its own).
    """
    x_ref = np.asarray(x_ref, dtype=float)
    u_ref = check_simplex(u_ref)
    h = dt / substeps
    residual = np.linalg.norm(convexified_map(model, ctrl, x_ref, u_ref, dt, substeps) - x_ref)
    if residual > 1e-8:
        raise ContractError(f"({x_ref}, {u_ref}) is not a steady state, residual {residual:.2e}")

    def step(x, u):
        return rollout(model, ctrl.values, x, u[None, :], h, substeps)[-1]

    n, m = x_ref.size, u_ref.size
    A = np.empty((n, n))
    for j in range(n):
        d = eps * max(1.0, abs(x_ref[j]))
        e = np.zeros(n)
        e[j] = d
        A[:, j] = (step(x_ref + e, u_ref) - step(x_ref - e, u_ref)) / (2 * d)
    B = np.empty((n, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = eps
        B[:, i] = (step(x_ref, u_ref + e) - step(x_ref, u_ref - e)) / (2 * eps)
    return A, B


def dare_residual(A, B, Q, W, rho, P) -> float:
    G = rho * W + B.T @ P @ B
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(G, B.T @ P @ A) + rho * Q
    return float(np.linalg.norm(rhs - P))


def solve_dare(A, B, Q, W, rho: float = 1.0, tol: float = 1e-12, max_iter: int = 100_000):
    """Riccati fixed-point iteration started from ``P = rho Q``.

    Returns ``(P, K)`` with ``K = (rho W + B' P B)^{-1} B' P A``.
    """
    A, B, Q, W = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, W))
    if rho < 1:
        raise ContractError("rho must be >= 1")
    if np.linalg.eigvalsh(Q).min() <= 0 or np.linalg.eigvalsh(W).min() <= 0:
        raise ContractError("Q and W must be positive definite")
    P = rho * Q
    for it in range(max_iter):
        BtP = B.T @ P
        G = rho * W + BtP @ B
        P_new = A.T @ P @ A - (A.T @ P @ B) @ np.linalg.solve(G, BtP @ A) + rho * Q
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)):
            break
        delta = np.linalg.norm(P_new - P)
        P = P_new
        if delta <= tol:
            K = np.linalg.solve(rho * W + B.T @ P @ B, B.T @ P @ A)
            log.debug("DARE converged after %d iterations", it + 1)
            return P, K
    raise StabilizabilityError(f"Riccati iteration did not converge in {max_iter} iterations")


def build_terminal(model, ctrl, Q, u_ref, grid: GridSpec, pi: float = 0.3, rho: float = 1.001) -> TerminalIngredients:
    """Linearize at ``(0, u_ref)`` and solve the DARE with ``W = diag(R)``."""
    x_ref = np.zeros(model.state_dim)
    A, B = linearize(model, ctrl, x_ref, u_ref, grid.coarse_step, grid.coarse_substeps)
    W = np.diag(ctrl.cost_row)
    P, K = solve_dare(A, B, Q, W, rho)
    return TerminalIngredients(P=P, pi=float(pi), K=K, rho=float(rho), W=W, u_ref=np.asarray(u_ref, dtype=float))


def terminal_value(P, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ P @ x)


def terminal_membership(P, pi: float, x) -> bool:
    return terminal_value(P, x) <= pi


def terminal_control_law(K, u_ref, x, terminal: TerminalIngredients | None = None) -> np.ndarray:
    """Projected LQR law ``P_simplex(u_ref - K x)``."""
    x = np.asarray(x, dtype=float)
    if terminal is not None and not terminal_membership(terminal.P, terminal.pi, x):
        log.warning("terminal law evaluated outside the terminal set at x=%s", x)
    return project_simplex(np.asarray(u_ref, dtype=float) - np.asarray(K) @ x)


def evaluate_cost(problem: OcpProblem, x0, U):
    """``J_N(x0, U)`` and the states at the coarse nodes."""
    x0 = np.asarray(x0, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1, problem.ctrl.cardinality)
    if len(U) != problem.horizon:
        raise ContractError(f"expected {problem.horizon} multipliers, got {len(U)}")
    if len(U) == 0:
        return terminal_value(problem.terminal.P, x0), x0[None, :].copy()
    check_simplex(U)
    S = problem.grid.coarse_substeps
    traj = rollout(problem.model, problem.ctrl.values, x0, U, problem.grid.integration_step, S)
    states = traj[::S]
    J = float(
        np.sum(state_cost(problem.Q, states[:-1]))
        + np.sum(control_cost(problem.ctrl, problem.variant, U))
        + terminal_value(problem.terminal.P, states[-1])
    )
    return J, states.copy()


def terminal_decrease_check(problem: OcpProblem, samples: int = 1000, seed: int = 0):
    """Sample the terminal set and test the terminal decrease condition.

    Checks ``V_f(F(x) k_f(x)) - V_f(x) <= -l(x, k_f(x))`` and invariance of the
    terminal set. Returns ``(fraction_ok, failures)``; failures are logged.
    """
    term = problem.terminal
    rng = np.random.default_rng(seed)
    n = problem.model.state_dim
    # uniform samples of the ellipsoid x' P x <= pi
    L = np.linalg.cholesky(np.linalg.inv(term.P / term.pi))
    d = rng.standard_normal((samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.random(samples) ** (1.0 / n)
    xs = (d * r[:, None]) @ L.T
    failures = []
    S = problem.grid.coarse_substeps
    for x in xs:
        u = terminal_control_law(term.K, term.u_ref, x)
        x_next = rollout(problem.model, problem.ctrl.values, x, u[None, :], problem.grid.integration_step, S)[-1]
        lhs = terminal_value(term.P, x_next) - terminal_value(term.P, x)
        stage = state_cost(problem.Q, x) + control_cost(problem.ctrl, problem.variant, u)
        if lhs > -stage or terminal_value(term.P, x_next) > term.pi:
            failures.append((x, lhs + stage))
    for x, excess in failures:
        log.info("terminal decrease fails at x=%s by %.3e", x, excess)
    return 1.0 - len(failures) / samples, failures
