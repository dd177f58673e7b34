import numpy as np
import pytest

from mimpc.config import ExperimentConfig, build_problem
from mimpc.convexification import ControlSet, CostVariant
from mimpc.dynamics import GridSpec, make_model, vanderpol
from mimpc.mpc import run_closed_loop
from mimpc.ocp import OcpProblem, build_terminal


@pytest.fixture(scope="session")
def vdp():
    return vanderpol()


@pytest.fixture(scope="session")
def omega2():
    return ControlSet([[-1.0], [1.0]], [[1.0]])


@pytest.fixture(scope="session")
def benchmark():
    """The default experiment problem (horizon 20, step 0.15)."""
    return build_problem(ExperimentConfig())


@pytest.fixture(scope="session")
def relaxed_log(benchmark):
    return run_closed_loop(benchmark, [0.5, 0.0], 120)


def scalar_model(a: float, b: float = 0.0, name: str = "scalar"):
    """``dx/dt = a x + b v`` with the steady state at the origin for ``v = 0``."""

    def rhs(x, v, out):
        out[0] = a * x[0] + b * v[0]

    def jac(x, v, out):
        out[0, 0] = a

    return make_model(name, 1, 1, rhs, jac, params={"a": a, "b": b})


def small_problem(model, ctrl, u_ref, horizon=1, Q=None, pi=1e3, coarse_step=0.1, integration_step=0.05):
    Q = np.eye(model.state_dim) if Q is None else np.asarray(Q, dtype=float)
    grid = GridSpec(coarse_step, horizon, 1, integration_step)
    term = build_terminal(model, ctrl, Q, u_ref, grid, pi=pi, rho=1.0)
    return OcpProblem(model, ctrl, CostVariant("quadratic", u_ref), Q, term, grid)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
