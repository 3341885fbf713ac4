import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simulcontrol.core_dynamics import (
    ControlSignal,
    IntegrationDivergence,
    LinearResponse,
    TimeGrid,
    integrate_adjoint,
    integrate_forward,
    l2_inner,
    l2_norm_sq,
    propagate_exact,
)

import oracles

GRID = TimeGrid(1.0, 200)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10)
    g = TimeGrid(2.0, 8)
    assert g.step == 0.25 and g.n_nodes == 9
    assert np.all(np.diff(g.nodes) > 0) and g.nodes[0] == 0 and g.nodes[-1] == 2.0


def test_exponential_growth():
    x = integrate_forward([[1.0]], [[0.0]], ControlSignal.zeros(GRID), [1.0])
    assert x.terminal[0] == pytest.approx(np.e, abs=1e-8)
    assert x.initial[0] == 1.0


def test_zero_dynamics_constant():
    c = np.array([0.3, -2.0])
    x = integrate_forward(np.zeros((2, 2)), np.zeros((2, 1)), ControlSignal.zeros(GRID), c)
    assert np.all(x.values == c)


def test_forced_decay():
    x = integrate_forward([[-1.0]], [[1.0]], ControlSignal.constant(GRID, 1.0), [0.0])
    assert x.terminal[0] == pytest.approx(1 - np.exp(-1), abs=1e-8)


def test_matches_naive_rk4(rng):
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 2))
    u = rng.standard_normal((GRID.n_nodes, 2))
    x0 = rng.standard_normal(3)
    x = integrate_forward(a, b, ControlSignal(GRID, u), x0)
    ref = oracles.rk4_terminal(a, b, u, x0, 1.0, 200)
    np.testing.assert_allclose(x.terminal, ref, rtol=1e-12, atol=1e-12)


def test_fourth_order():
    def err(n):
        g = TimeGrid(1.0, n)
        return abs(integrate_forward([[1.0]], [[0.0]], ControlSignal.zeros(g), [1.0]).terminal[0] - np.e)

    assert 14 <= err(50) / err(100) <= 18
    assert 14 <= err(100) / err(200) <= 18


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        integrate_forward(np.eye(2), np.ones((3, 1)), ControlSignal.zeros(GRID), [0, 0])
    with pytest.raises(ValueError):
        integrate_forward(np.eye(2), np.ones((2, 1)), ControlSignal.zeros(GRID), [0, 0, 0])


def test_divergence_reports_node():
    g = TimeGrid(1.0, 10)
    with pytest.raises(IntegrationDivergence) as info:
        integrate_forward([[5000.0]], [[0.0]], ControlSignal.zeros(g), [1e300])
    assert 1 <= info.value.node <= 10


def test_adjoint_zero_dynamics():
    p = integrate_adjoint(np.zeros((2, 2)), [1.5, -0.5], GRID)
    assert np.all(p.values == [1.5, -0.5])


def test_adjoint_scalar():
    p = integrate_adjoint([[1.0]], [2.0], GRID)
    assert p.terminal[0] == 2.0
    assert p.initial[0] == pytest.approx(2.0 * np.e, abs=1e-8)


def test_adjoint_skew_conserves_norm():
    p = integrate_adjoint([[0.0, 2.0], [-2.0, 0.0]], [1.0, 0.5], GRID)
    norms = np.linalg.norm(p.values, axis=1)
    assert np.ptp(norms) < 1e-8


def test_adjoint_is_reversed_forward(rng):
    a = rng.standard_normal((3, 3))
    pt = rng.standard_normal(3)
    p = integrate_adjoint(a, pt, GRID)
    # in reversed time s = T - t the adjoint reads dp/ds = A^T p
    fwd = integrate_forward(a.T, np.zeros((3, 1)), ControlSignal.zeros(GRID), pt)
    np.testing.assert_allclose(p.values, fwd.values[::-1], rtol=0, atol=1e-12)


def test_propagate_exact_agrees():
    u = ControlSignal.zeros(GRID)
    exact = propagate_exact([[1.0]], [[0.0]], u, [1.0], GRID)
    rk = integrate_forward([[1.0]], [[0.0]], u, [1.0])
    assert abs(exact.terminal[0] - rk.terminal[0]) < 1e-6
    assert exact.terminal[0] == pytest.approx(np.e, rel=1e-14)


def test_propagate_exact_smooth_system(rng):
    a = np.array([[0.0, 1.0], [-4.0, -0.3]])
    b = np.array([[0.0], [1.0]])
    u = ControlSignal.from_function(GRID, lambda t: np.sin(3 * t))
    exact = propagate_exact(a, b, u, [1.0, 0.0], GRID, hold="linear")
    rk = integrate_forward(a, b, u, [1.0, 0.0])
    np.testing.assert_allclose(exact.values, rk.values, atol=1e-6)


def test_propagate_exact_nilpotent_brunovsky():
    a = np.diag([1.0, 1.0], k=1)
    t = GRID.nodes
    x = propagate_exact(a, np.ones((3, 1)), ControlSignal.zeros(GRID), [1, 1, 1], GRID)
    # e^{At} x0 for the 3x3 shift: finite series
    ref = np.stack([1 + t + t**2 / 2, 1 + t, np.ones_like(t)], axis=1)
    np.testing.assert_allclose(x.values, ref, rtol=1e-13, atol=0)


def test_propagate_exact_no_input_is_homogeneous(rng):
    a = rng.standard_normal((2, 2))
    u = ControlSignal.from_function(GRID, lambda t: 5 * t)
    x = propagate_exact(a, np.zeros((2, 1)), u, [1, 2], GRID)
    y = propagate_exact(a, np.zeros((2, 1)), ControlSignal.zeros(GRID), [1, 2], GRID)
    np.testing.assert_array_equal(x.values, y.values)


def test_linear_response_matches_sweep(rng):
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 1))
    u = ControlSignal(GRID, rng.standard_normal((GRID.n_nodes, 1)))
    x0 = rng.standard_normal(3)
    resp = LinearResponse(a, b, GRID)
    direct = integrate_forward(a, b, u, x0).terminal
    np.testing.assert_allclose(resp.free_terminal(x0) + resp.control_terminal(u), direct, atol=1e-13)


def test_l2_examples():
    one = ControlSignal.constant(GRID, 1.0)
    t = ControlSignal.from_function(GRID, lambda s: s)
    assert l2_inner(one, one) == pytest.approx(1.0, abs=1e-15)
    assert l2_inner(t, one) == pytest.approx(0.5, abs=1e-15)
    assert l2_inner(t, t) == pytest.approx(1 / 3, abs=1e-5)
    assert l2_norm_sq(ControlSignal.zeros(GRID)) == 0
    assert l2_norm_sq(ControlSignal.constant(GRID, 2.0)) == pytest.approx(4.0, abs=1e-14)
    s = ControlSignal.from_function(GRID, lambda x: np.sin(2 * np.pi * x))
    assert l2_norm_sq(s) == pytest.approx(0.5, abs=1e-4)


def test_l2_grid_mismatch():
    with pytest.raises(ValueError):
        l2_inner(ControlSignal.zeros(GRID), ControlSignal.zeros(TimeGrid(1.0, 100)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_l2_bilinear_symmetric(seed, alpha, gamma):
    r = np.random.default_rng(seed)
    u, v, w = (ControlSignal(GRID, r.standard_normal((GRID.n_nodes, 2))) for _ in range(3))
    assert l2_inner(u, v) == l2_inner(v, u)
    lhs = l2_inner(alpha * u + gamma * v, w)
    rhs = alpha * l2_inner(u, w) + gamma * l2_inner(v, w)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    assert l2_norm_sq(alpha * u) == pytest.approx(alpha**2 * l2_norm_sq(u), rel=1e-13, abs=1e-300)


def test_control_signal_rejects_bad_samples():
    with pytest.raises(ValueError):
        ControlSignal(GRID, np.zeros(10))
    with pytest.raises(ValueError):
        ControlSignal(GRID, np.full(GRID.n_nodes, np.nan))
    u = ControlSignal.zeros(GRID)
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0
