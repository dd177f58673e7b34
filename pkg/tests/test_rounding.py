import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimpc.errors import ContractError, SimplexInfeasibleError
from mimpc.rounding import (
    integral_gap,
    round_control,
    simple_rounding,
    state_error_bound,
    sum_up_rounding,
    theoretical_bounds,
)


def sur_reference(u, n_os, dt):
    """Literal SUR: float deficit accumulators updated step by step."""
    eta_int = np.zeros(len(u))
    out = []
    for _ in range(n_os):
        eta = eta_int + dt * np.asarray(u)
        j = int(np.argmax(eta))  # first maximum = lowest index
        out.append(j)
        eta_int = eta.copy()
        eta_int[j] -= dt
    return np.array(out)


def dense_gap(u, idx, dt, per_interval=50):
    """Sup of the running-integral norm sampled inside every fine interval."""
    u = np.asarray(u)
    acc, best = np.zeros(len(u)), 0.0
    for j in idx:
        w = np.zeros(len(u))
        w[j] = 1.0
        for s in np.linspace(0, dt, per_interval + 1)[1:]:
            best = max(best, np.linalg.norm(acc + s * (u - w)))
        acc = acc + dt * (u - w)
    return best


def random_simplex(rng, m):
    kind = rng.integers(3)
    if kind == 0:
        return rng.dirichlet(np.ones(m))
    if kind == 1:  # sparse
        u = np.zeros(m)
        k = rng.integers(1, m + 1)
        u[rng.choice(m, k, replace=False)] = rng.dirichlet(np.ones(k))
        return u
    # near-ties, where the worst case of the bound lives
    u = np.full(m, 1.0 / m) + rng.normal(scale=1e-3, size=m)
    u = np.abs(u)
    return u / u.sum()


def unit_rows(idx, m):
    return np.eye(m)[idx]


@pytest.mark.parametrize(
    "u, n_os, expected",
    [((0.7, 0.3), 3, [0, 0, 0]), ((0.5, 0.5), 2, [0, 0]), ((1.0, 0.0), 4, [0, 0, 0, 0])],
)
def test_simple_rounding_examples(u, n_os, expected):
    r = simple_rounding(np.array(u), n_os)
    np.testing.assert_array_equal(r.indices, expected)
    np.testing.assert_array_equal(r.omega, unit_rows(expected, 2))


@pytest.mark.parametrize(
    "u, n_os, expected",
    [((0.5, 0.5), 4, [0, 1, 0, 1]), ((0.7, 0.3), 3, [0, 1, 0]), ((0.0, 1.0), 7, [1] * 7)],
)
def test_sum_up_rounding_hand_executions(u, n_os, expected):
    r = sum_up_rounding(np.array(u), n_os, dt=1.0)
    np.testing.assert_array_equal(r.indices, expected)


def test_binary_inputs_have_zero_gap():
    assert sum_up_rounding(np.array([0.0, 1.0]), 7, 0.1).sigma == 0.0
    assert simple_rounding(np.array([1.0, 0.0]), 3, 0.1).sigma == 0.0


def test_integral_gap_examples():
    assert integral_gap([0.5, 0.5], unit_rows([0, 1], 2), 0.1) == pytest.approx(0.05 * math.sqrt(2), abs=1e-15)
    assert integral_gap([0.0, 1.0], unit_rows([1, 1, 1], 2), 0.1) == 0.0
    assert integral_gap([0.3, 0.7], np.zeros((0, 2)), 0.1) == 0.0


def test_integral_gap_attained_at_grid_points():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.integers(2, 5)
        u = rng.dirichlet(np.ones(m))
        idx = rng.integers(0, m, size=rng.integers(1, 12))
        dt = rng.uniform(0.01, 0.2)
        assert integral_gap(u, unit_rows(idx, m), dt) >= dense_gap(u, idx, dt) - 1e-15


def test_theoretical_bound_examples():
    b = theoretical_bounds(2, 0.15, 1)
    assert b.sigma_sur == pytest.approx(math.sqrt(2) * 0.15 * 0.5)
    assert b.sigma_sr == pytest.approx(b.sigma_sur)
    assert theoretical_bounds(2, 0.15, 5).sigma_sur == pytest.approx(0.1060660171779821)
    assert theoretical_bounds(3, 0.1, 1).sigma_sur == pytest.approx(math.sqrt(3) * 0.1 * 0.5)
    assert theoretical_bounds(4, 0.1, 10).sigma_sur == pytest.approx(2 * 0.1 * (1 / 2 + 1 / 3 + 1 / 4))
    with pytest.raises(ContractError):
        theoretical_bounds(1, 0.1, 1)


def test_sur_bound_on_ten_thousand_cases():
    rng = np.random.default_rng(42)
    violations = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 7))
        n_os = int(rng.integers(1, 65))
        dt = 0.15 / n_os
        u = random_simplex(rng, m)
        r = sum_up_rounding(u, n_os, dt)
        violations += r.sigma > theoretical_bounds(m, dt, n_os).sigma_sur * (1 + 1e-12)
    assert violations == 0


def test_sur_matches_literal_accumulator_reference():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        m = int(rng.integers(2, 7))
        n_os = int(rng.integers(1, 40))
        # dyadic entries make the float reference exact, so ties are resolved identically
        u = rng.multinomial(64, np.ones(m) / m) / 64.0
        np.testing.assert_array_equal(sum_up_rounding(u, n_os, 1.0).indices, sur_reference(u, n_os, 1.0))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=6).filter(lambda w: sum(w) > 1e-3), st.integers(1, 64))
def test_sur_never_exceeds_bound(weights, n_os):
    u = np.asarray(weights) / np.sum(weights)
    dt = 0.15 / n_os
    assert sum_up_rounding(u, n_os, dt).sigma <= theoretical_bounds(len(u), dt, n_os).sigma_sur * (1 + 1e-12)


def test_sr_and_sur_coincide_at_one_fine_step():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        m = int(rng.integers(2, 7))
        u = random_simplex(rng, m)
        assert np.array_equal(simple_rounding(u, 1, 0.15).indices, sum_up_rounding(u, 1, 0.15).indices)


def test_binary_idempotence():
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        m = int(rng.integers(2, 7))
        n_os = int(rng.integers(1, 65))
        j = int(rng.integers(m))
        u = np.eye(m)[j]
        for method in ("sr", "sur"):
            r = round_control(u, n_os, 0.15 / n_os, method)
            assert r.sigma == 0.0
            assert np.all(r.indices == j)


def test_sr_gap_grows_linearly():
    u = np.array([0.6, 0.4])
    gaps = [simple_rounding(u, n, 0.01).sigma for n in (1, 2, 4, 8, 16)]
    np.testing.assert_allclose(np.diff(gaps) / np.diff([1, 2, 4, 8, 16]), 0.01 * 0.4 * math.sqrt(2))


def test_deficit_stays_bounded_for_long_sequences():
    rng = np.random.default_rng(13)
    for _ in range(50):
        m = int(rng.integers(2, 6))
        u = rng.dirichlet(np.ones(m))
        for n_os in (10, 100, 1000, 5000):
            d = sum_up_rounding(u, n_os, 1.0).deficit
            assert np.all(np.abs(d) <= m)
            assert abs(d.sum()) <= 1e-9 * n_os


def test_carried_deficit_keeps_the_global_gap_bounded():
    u = np.array([0.35, 0.65])
    carry, total = None, []
    for _ in range(200):
        r = sum_up_rounding(u, 3, 0.05, carry)
        carry = r.deficit
        total.append(r.indices)
    idx = np.concatenate(total)
    assert integral_gap(u, unit_rows(idx, 2), 0.05) <= theoretical_bounds(2, 0.05, 600).sigma_sur + 1e-12


def test_rounding_contracts():
    with pytest.raises(SimplexInfeasibleError):
        sum_up_rounding(np.array([0.6, 0.6]), 2)
    with pytest.raises(ContractError):
        sum_up_rounding(np.array([0.5, 0.5]), 0)
    with pytest.raises(ContractError):
        round_control(np.array([0.5, 0.5]), 2, 0.1, "nearest")


def test_state_error_bound():
    assert state_error_bound(2, 0, 1, 0.15, 0.0) == 0.0
    assert state_error_bound(2, 0, 1, 0.15, 0.1) == pytest.approx(0.2 * math.exp(0.15), abs=1e-6)
    assert state_error_bound(2, 0, 1, 0.15, 0.1) == pytest.approx(0.232367, abs=1e-6)
    base = (2.0, 1.0, 1.0, 0.15, 0.1)
    for k in range(5):
        bumped = list(base)
        bumped[k] *= 1.5
        assert state_error_bound(*bumped) >= state_error_bound(*base)
