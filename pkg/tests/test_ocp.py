import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm, solve_discrete_are

from mimpc.convexification import ControlSet, CostVariant, control_cost, state_cost
from mimpc.dynamics import GridSpec, convexified_map
from mimpc.errors import ContractError, StabilizabilityError
from mimpc.ocp import (
    OcpProblem,
    TerminalIngredients,
    build_terminal,
    dare_residual,
    evaluate_cost,
    linearize,
    solve_dare,
    terminal_control_law,
    terminal_decrease_check,
    terminal_membership,
    terminal_value,
)

from conftest import scalar_model

U_F = np.array([0.5, 0.5])


def test_vdp_linearization_matches_variational_oracle(vdp, omega2):
    A, B = linearize(vdp, omega2, [0, 0], U_F, 0.15, 30)
    Ac = np.array([[0.0, 1.0], [-1.0, 1.0]])
    np.testing.assert_allclose(A, expm(0.15 * Ac), atol=2e-6)
    # B columns: the input enters as sin(v_i) u_i, so dB_i = int exp(Ac s) ds [0, sin v_i]
    grid = np.linspace(0, 0.15, 3001)
    integral = np.trapezoid(np.array([expm(s * Ac) for s in grid]), grid, axis=0)
    for i, v in enumerate((-1.0, 1.0)):
        np.testing.assert_allclose(B[:, i], integral @ [0.0, np.sin(v)], atol=2e-6)


def test_linearization_first_order_consistency(vdp, omega2):
    A, _ = linearize(vdp, omega2, [0, 0], U_F, 0.15, 30)
    d = np.array([1e-4, -0.7e-4])
    lhs = convexified_map(vdp, omega2, d, U_F, 0.15, 30)
    assert np.linalg.norm(lhs - A @ d) <= 10 * np.linalg.norm(d) ** 2


def test_scalar_linearization_is_the_midpoint_polynomial():
    a = -0.8
    m = scalar_model(a, 1.0)
    ctrl = ControlSet([[0.0], [1.0]], [[1.0]])
    A, B = linearize(m, ctrl, [0.0], [1.0, 0.0], 0.1, 1)
    assert A[0, 0] == pytest.approx(1 + a * 0.1 + (a * 0.1) ** 2 / 2, abs=1e-10)
    assert B[0, 1] == pytest.approx(0.1 * (1 + a * 0.1 / 2), abs=1e-10)


def test_linearize_requires_steady_state(vdp, omega2):
    with pytest.raises(ContractError):
        linearize(vdp, omega2, [0, 0], [1.0, 0.0], 0.15, 30)


def test_scalar_dare_closed_form():
    P, K = solve_dare([[0.5]], [[1.0]], [[1.0]], [[1.0]], 1.0)
    assert P[0, 0] == pytest.approx((0.25 + np.sqrt(4.0625)) / 2, abs=1e-12)
    assert K[0, 0] == pytest.approx(P[0, 0] * 0.5 / (1 + P[0, 0]), abs=1e-12)


def test_dare_zero_dynamics():
    Q = np.diag([2.0, 3.0])
    P, _ = solve_dare(np.zeros((2, 2)), np.eye(2), Q, np.eye(2), 1.5)
    np.testing.assert_allclose(P, 1.5 * Q)


def test_dare_against_scipy_on_benchmark(vdp, omega2):
    A, B = linearize(vdp, omega2, [0, 0], U_F, 0.15, 30)
    W = np.diag(omega2.cost_row)
    P, K = solve_dare(A, B, np.eye(2), W, 1.001)
    np.testing.assert_allclose(P, solve_discrete_are(A, B, 1.001 * np.eye(2), 1.001 * W), rtol=1e-9)
    assert dare_residual(A, B, np.eye(2), W, 1.001, P) <= 1e-10
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    assert np.linalg.eigvalsh(P).min() > 0
    # closed loop of the linearization is stable
    assert np.abs(np.linalg.eigvals(A - B @ K)).max() < 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_dare_unstabilizable_raises():
    with pytest.raises(StabilizabilityError):
        solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]], 1.0, max_iter=2000)


def test_terminal_value_examples():
    P = np.eye(2)
    assert terminal_value(P, [0, 0]) == 0 and terminal_membership(P, 0.3, [0, 0])
    assert terminal_value(P, [0.5477, 0]) == pytest.approx(0.29997529)
    assert terminal_membership(P, 0.3, [0.5477, 0])
    assert terminal_value(P, [0.6, 0]) == pytest.approx(0.36)
    assert not terminal_membership(P, 0.3, [0.6, 0])


def test_terminal_law(benchmark):
    t = benchmark.terminal
    np.testing.assert_array_equal(terminal_control_law(t.K, t.u_ref, [0, 0]), t.u_ref)
    rng = np.random.default_rng(0)
    for x in rng.normal(scale=3, size=(100, 2)):
        np.testing.assert_array_equal(terminal_control_law(np.zeros((2, 2)), t.u_ref, x), t.u_ref)
        u = terminal_control_law(t.K, t.u_ref, x)
        assert np.all(u >= 0) and abs(u.sum() - 1) <= 1e-12


def test_terminal_decrease_on_samples(benchmark):
    frac, _ = terminal_decrease_check(benchmark, samples=1000, seed=0)
    assert frac >= 0.99


def test_terminal_ingredients_validation():
    with pytest.raises(ContractError):
        TerminalIngredients(np.eye(2), -1.0, np.zeros((2, 2)), 1.0, np.eye(2), U_F)
    with pytest.raises(ContractError):
        TerminalIngredients(-np.eye(2), 0.3, np.zeros((2, 2)), 1.0, np.eye(2), U_F)


def test_cost_at_steady_state_is_zero(benchmark):
    J, states = evaluate_cost(benchmark, [0, 0], benchmark.reference_sequence())
    assert J == 0.0 and np.all(states == 0)


def test_cost_with_empty_horizon(benchmark):
    p0 = OcpProblem(benchmark.model, benchmark.ctrl, benchmark.variant, benchmark.Q, benchmark.terminal,
                    GridSpec(0.15, 0))
    J, states = evaluate_cost(p0, [0.3, -0.1], np.zeros((0, 2)))
    assert J == terminal_value(benchmark.terminal.P, [0.3, -0.1])
    assert states.shape == (1, 2)


def test_cost_against_independent_reimplementation(benchmark):
    """High-accuracy ODE solve of the convexified field, one coarse interval at a time."""
    P = benchmark.terminal.P
    drive = 0.5 * np.sin(-1.0) + 0.5 * np.sin(1.0)
    f = lambda t, x: [x[1], (1 - x[0] ** 2) * x[1] - x[0] + drive]
    x = np.array([0.5, 0.0])
    J = 0.0
    for _ in range(20):
        J += x @ x  # control part vanishes at u = u_f
        x = solve_ivp(f, (0, 0.15), x, method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    J += x @ P @ x
    p = benchmark
    fine = OcpProblem(p.model, p.ctrl, p.variant, p.Q, p.terminal, GridSpec(0.15, 20, 1, 0.0005))
    J_fine, _ = evaluate_cost(fine, [0.5, 0.0], p.reference_sequence())
    assert J_fine == pytest.approx(J, rel=1e-6)
    # the default 5 ms grid carries the O(h^2) midpoint error
    J_lib, _ = evaluate_cost(p, [0.5, 0.0], p.reference_sequence())
    assert J_lib == pytest.approx(J, rel=1e-5)


def test_cost_dynamic_programming_additivity(benchmark):
    rng = np.random.default_rng(3)
    p = benchmark
    short = OcpProblem(p.model, p.ctrl, p.variant, p.Q, p.terminal, GridSpec(0.15, p.horizon - 1))
    for _ in range(10):
        U = rng.dirichlet([1, 1], size=p.horizon)
        x = rng.normal(scale=0.4, size=2)
        J, states = evaluate_cost(p, x, U)
        stage = state_cost(p.Q, x) + control_cost(p.ctrl, p.variant, U[0])
        J_tail, _ = evaluate_cost(short, states[1], U[1:])
        assert J == pytest.approx(stage + J_tail, rel=1e-13)


def test_evaluate_cost_rejects_wrong_length(benchmark):
    with pytest.raises(ContractError):
        evaluate_cost(benchmark, [0, 0], np.full((3, 2), 0.5))


def test_build_terminal_uses_cost_row_weight(vdp, omega2):
    t = build_terminal(vdp, omega2, np.eye(2), U_F, GridSpec(0.15, 20))
    np.testing.assert_array_equal(t.W, np.eye(2))
    assert (t.pi, t.rho) == (0.3, 1.001)
