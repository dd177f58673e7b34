"""Single-shooting solver for the relaxed finite-horizon problem.

Projected gradient with Armijo backtracking on the product of simplices; the
single terminal inequality ``V_f(x_N) <= pi`` is handled by an augmented
Lagrangian (PHR) outer loop. Gradients come from the discrete adjoint of the
midpoint rollout, so they are exact for the discretized problem.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .convexification import check_simplex, control_cost, control_cost_grad, project_simplex, state_cost
from .dynamics import rollout, rollout_vjp
from .errors import ContractError, SolverInfeasibleError
from .ocp import OcpProblem, terminal_value

log = logging.getLogger(__name__)

_FD_CHECKED = False


@dataclass(frozen=True)
class SolverSettings:
    max_outer: int = 20
    max_inner: int = 500
    stationarity_tol: float = 1e-6
    constraint_tol: float = 1e-8
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    fd_check: bool = False

    def __post_init__(self):
        if self.stationarity_tol <= 0 or self.constraint_tol <= 0 or self.penalty_init <= 0:
            raise ContractError("solver tolerances and initial penalty must be positive")
        if self.penalty_growth <= 1:
            raise ContractError("penalty_growth must exceed 1")
        if not 0 < self.armijo_shrink < 1:
            raise ContractError("armijo_shrink must lie in (0, 1)")
        if self.max_outer < 1 or self.max_inner < 0:
            raise ContractError("iteration budgets must be positive")


@dataclass
class SolverDiagnostics:
    iterations: int = 0
    outer_iterations: int = 0
    stationarity: float = 0.0
    violation: float = 0.0
    wall_time: float = 0.0
    multiplier: float = 0.0
    penalty: float = 0.0
    converged: bool = False
    status: str = ""


@dataclass
class OcpSolution:
    multipliers: np.ndarray
    states: np.ndarray
    cost: float
    terminal_value: float
    diagnostics: SolverDiagnostics = field(default_factory=SolverDiagnostics)

    @property
    def first(self) -> np.ndarray:
        return self.multipliers[0]


class _Objective:
    """Augmented objective ``J + psi(V_f(x_N) - pi)`` with cached rollouts."""

    def __init__(self, problem: OcpProblem, x0: np.ndarray):
        self.p = problem
        self.x0 = x0
        self.S = problem.grid.coarse_substeps
        self.h = problem.grid.integration_step
        self.lam = 0.0
        self.mu = 0.0
        self.n_evals = 0

    def _forward(self, U):
        self.n_evals += 1
        p = self.p
        traj = rollout(p.model, p.ctrl.values, self.x0, U, self.h, self.S)
        states = traj[:: self.S]
        vf = terminal_value(p.terminal.P, states[-1])
        J = float(np.sum(state_cost(p.Q, states[:-1])) + np.sum(control_cost(p.ctrl, p.variant, U)) + vf)
        return traj, states, J, vf - p.terminal.pi

    def _penalty(self, g):
        if self.mu <= 0:
            return 0.0, 0.0
        t = self.lam + self.mu * g
        if t > 0:
            return (t * t - self.lam * self.lam) / (2 * self.mu), t
        return -self.lam * self.lam / (2 * self.mu), 0.0

    def value(self, U):
        _, states, J, g = self._forward(U)
        return J + self._penalty(g)[0], J, g, states

    def value_and_grad(self, U):
        p = self.p
        traj, states, J, g = self._forward(U)
        psi, dpsi = self._penalty(g)
        node_bar = 2.0 * states @ p.Q
        node_bar[-1] = (1.0 + dpsi) * 2.0 * (p.terminal.P @ states[-1])
        _, gU = rollout_vjp(p.model, p.ctrl.values, traj, U, self.h, self.S, node_bar)
        gU += control_cost_grad(p.ctrl, p.variant, U)
        return J + psi, J, g, states, gU


def cost_gradient(problem: OcpProblem, x0, U, lam: float = 0.0, mu: float = 0.0) -> np.ndarray:
    """Exact gradient of ``J_N`` (plus the PHR penalty term when ``mu > 0``)."""
    U = check_simplex(np.asarray(U, dtype=float).reshape(problem.horizon, problem.ctrl.cardinality))
    obj = _Objective(problem, np.asarray(x0, dtype=float))
    obj.lam, obj.mu = float(lam), float(mu)
    return obj.value_and_grad(U)[-1]


def gradient_self_check(problem: OcpProblem, x0, U=None, seed: int = 0, step: float = 1e-6) -> float:
    """Max relative deviation between the adjoint gradient and central differences."""
    rng = np.random.default_rng(seed)
    N, m = problem.horizon, problem.ctrl.cardinality
    if U is None:
        U = rng.dirichlet(np.ones(m), size=N)
    obj = _Objective(problem, np.asarray(x0, dtype=float))
    g = obj.value_and_grad(U)[-1]
    fd = np.empty_like(g)
    for k in range(N):
        for i in range(m):
            Up, Um = U.copy(), U.copy()
            Up[k, i] += step
            Um[k, i] -= step
            fd[k, i] = (obj.value(Up)[1] - obj.value(Um)[1]) / (2 * step)
    scale = np.maximum(np.abs(fd), 1e-8 * max(1.0, np.abs(fd).max()))
    return float(np.max(np.abs(g - fd) / scale))


def _residual(U, grad):
    return float(np.max(np.abs(U - project_simplex(U - grad)))) if U.size else 0.0


def _run_fd_check(problem, x0):
    global _FD_CHECKED
    if _FD_CHECKED:
        return
    err = gradient_self_check(problem, x0)
    _FD_CHECKED = True
    if err > 1e-4:
        raise RuntimeError(f"adjoint gradient disagrees with finite differences (rel. err {err:.2e})")
    log.info("adjoint gradient self-check passed (rel. err %.2e)", err)


def solve_ocp(problem: OcpProblem, x0, warm=None, settings: SolverSettings | None = None, lam0: float = 0.0) -> OcpSolution:
    """Minimize ``J_N(x0, .)`` over multiplier sequences with ``V_f(x_N) <= pi``.

    ``warm`` is an ``(N, |Omega|)`` initial guess (default: all ``u_ref``),
    ``lam0`` a warm start for the terminal-constraint multiplier.
    """
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.model.state_dim,) or not np.all(np.isfinite(x0)):
        raise ContractError(f"initial state must be a finite vector of length {problem.model.state_dim}")
    N, m = problem.horizon, problem.ctrl.cardinality
    if warm is None:
        U = problem.reference_sequence()
    else:
        U = check_simplex(np.array(warm, dtype=float).reshape(-1, m))
        if len(U) != N:
            raise ContractError(f"warm start must have {N} multipliers, got {len(U)}")
        U = project_simplex(U)
    if settings.fd_check and N > 0:
        _run_fd_check(problem, x0)

    diag = SolverDiagnostics()
    obj = _Objective(problem, x0)
    if N == 0:
        J, states = terminal_value(problem.terminal.P, x0), x0[None, :].copy()
        diag.violation = max(0.0, J - problem.terminal.pi)
        diag.converged = diag.violation <= settings.constraint_tol
        diag.wall_time = time.perf_counter() - t_start
        if not diag.converged:
            raise SolverInfeasibleError(diag.violation)
        return OcpSolution(U, states, J, J, diag)

    obj.lam, obj.mu = max(0.0, float(lam0)), settings.penalty_init
    _, J_warm, g_warm, states_warm = obj.value(U)
    warm_feasible = g_warm <= settings.constraint_tol
    U_warm = U.copy()

    c, shrink = settings.armijo_c, settings.armijo_shrink
    phi, J, g, states, grad = obj.value_and_grad(U)
    res = _residual(U, grad)
    step = 1.0
    prev_violation = np.inf
    for outer in range(settings.max_outer):
        diag.outer_iterations = outer + 1
        stalled = False
        for _ in range(settings.max_inner):
            if res <= settings.stationarity_tol:
                break
            t = step
            while True:
                U_t = project_simplex(U - t * grad)
                phi_t = obj.value(U_t)[0]
                if phi_t <= phi + c * float(np.sum(grad * (U_t - U))):
                    break
                t *= shrink
                if t < 1e-14:
                    stalled = True
                    break
            if stalled:
                break
            diag.iterations += 1
            phi_n, J, g, states, grad_n = obj.value_and_grad(U_t)
            s, y = U_t - U, grad_n - grad
            sy = float(np.sum(s * y))
            # Barzilai-Borwein guess for the next trial step
            step = float(np.clip(np.sum(s * s) / sy, 1e-8, 1e8)) if sy > 0 else min(2 * t, 1e8)
            U, phi, grad = U_t, phi_n, grad_n
            res = _residual(U, grad)
        violation = max(0.0, g)
        if violation <= settings.constraint_tol and (res <= settings.stationarity_tol or stalled):
            lam_new = max(0.0, obj.lam + obj.mu * g)
            if lam_new == obj.lam or res <= settings.stationarity_tol:
                obj.lam = lam_new
                break
        obj.lam = max(0.0, obj.lam + obj.mu * g)
        if violation > 0.25 * prev_violation:
            obj.mu *= settings.penalty_growth
        prev_violation = violation
        phi, J, g, states, grad = obj.value_and_grad(U)
        res = _residual(U, grad)
        step = 1.0

    violation = max(0.0, g)
    diag.stationarity = res
    diag.violation = violation
    diag.multiplier = obj.lam
    diag.penalty = obj.mu
    diag.converged = res <= settings.stationarity_tol and violation <= settings.constraint_tol
    diag.status = "converged" if diag.converged else ("stalled" if violation <= settings.constraint_tol else "infeasible")
    if warm_feasible and J > J_warm + 1e-12:
        U, J, states = U_warm, J_warm, states_warm
        violation = max(0.0, g_warm)
        diag.status = "warm start kept"
    diag.wall_time = time.perf_counter() - t_start
    if violation > settings.constraint_tol:
        raise SolverInfeasibleError(violation)
    return OcpSolution(U, states.copy(), float(J), terminal_value(problem.terminal.P, states[-1]), diag)

