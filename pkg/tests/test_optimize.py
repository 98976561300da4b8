import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqfl.optimize import (
    Method,
    OptimizerConfig,
    OptimizerError,
    evaluation_budget,
    finite_diff_gradient,
    minimize,
)


class Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, theta):
        self.calls += 1
        return self.fn(theta)


def test_quadratic_minimum():
    theta, trace = minimize(lambda t: (t[0] - 3.0) ** 2, [0.0], OptimizerConfig(maxiter=200))
    assert abs(theta[0] - 3.0) <= 1e-3
    assert trace.best_value == min(trace.values)


def test_constant_objective_returns_init():
    init = np.array([0.3, -1.2])
    theta, trace = minimize(lambda t: 7.0, init, OptimizerConfig(maxiter=50))
    np.testing.assert_array_equal(theta, init)
    assert trace.best_value == 7.0


def test_sphere_5d():
    _, trace = minimize(lambda t: float(np.sum(t**2)), np.ones(5), OptimizerConfig(maxiter=500))
    assert trace.best_value <= 1e-4


def test_maxiter_zero_single_evaluation():
    for method in Method:
        theta, trace = minimize(lambda t: float(np.sum(t)), [1.0, 2.0], OptimizerConfig(method, maxiter=0))
        np.testing.assert_array_equal(theta, [1.0, 2.0])
        assert len(trace.evaluations) == 1


def test_gradient_descent_converges():
    cfg = OptimizerConfig(Method.GRADIENT_DESCENT, maxiter=200, step_size=0.2)
    theta, _ = minimize(lambda t: float(np.sum((t - 1.5) ** 2)), np.zeros(3), cfg)
    np.testing.assert_allclose(theta, 1.5, atol=1e-6)


def test_single_descent_step_is_the_update_rule():
    # one step of theta - eta * grad on f = theta^2 from 2.0 with eta 0.1 -> 1.6
    cfg = OptimizerConfig(Method.GRADIENT_DESCENT, maxiter=1, step_size=0.1)
    theta, _ = minimize(lambda t: float(t[0] ** 2), [2.0], cfg)
    assert theta[0] == pytest.approx(1.6, abs=1e-8)


def test_non_finite_init_rejected():
    with pytest.raises(OptimizerError):
        minimize(lambda t: math.nan, [0.0], OptimizerConfig())
    with pytest.raises(OptimizerError):
        minimize(lambda t: math.inf, [0.0], OptimizerConfig())


def test_config_validation():
    with pytest.raises(OptimizerError):
        OptimizerConfig(maxiter=-1)
    with pytest.raises(OptimizerError):
        OptimizerConfig(step_size=0)
    with pytest.raises(ValueError):
        OptimizerConfig(method="cobyla")


class TestFiniteDifferences:
    def test_square(self):
        g = finite_diff_gradient(lambda t: float(t[0] ** 2), [2.0], 1e-5)
        assert g[0] == pytest.approx(4.0, abs=1e-6)

    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_gradient(lambda t: 3.0, [1.0, 2.0, 3.0]), [0, 0, 0])

    def test_product(self):
        g = finite_diff_gradient(lambda t: float(t[0] * t[1]), [2.0, 3.0], 1e-5)
        np.testing.assert_allclose(g, [3.0, 2.0], atol=1e-6)

    def test_bad_epsilon(self):
        with pytest.raises(OptimizerError):
            finite_diff_gradient(lambda t: 0.0, [0.0], 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_quadratic_forms(self, dim, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(dim, dim))
        a = a @ a.T
        b = rng.normal(size=dim)
        x = rng.normal(size=dim)
        g = finite_diff_gradient(lambda t: float(t @ a @ t + b @ t), x, 1e-5)
        analytic = 2 * a @ x + b
        np.testing.assert_allclose(g, analytic, rtol=1e-5, atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(Method)), st.integers(1, 5), st.integers(0, 30), st.integers(0, 1000))
def test_budget_and_best_so_far(method, dim, maxiter, seed):
    rng = np.random.default_rng(seed)
    center = rng.normal(size=dim)
    f = Counter(lambda t: float(np.sum(np.abs(t - center) ** 1.5)))
    init = rng.normal(size=dim)
    theta, trace = minimize(f, init, OptimizerConfig(method, maxiter=maxiter, step_size=0.05))
    assert f.calls == len(trace.evaluations)
    assert f.calls <= evaluation_budget(method, dim, maxiter)
    assert trace.best_value <= trace.values[0]
    best = trace.best_so_far()
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert f(theta) == trace.best_value


def test_determinism():
    f = lambda t: float(np.sin(t[0]) + (t[1] - 0.3) ** 2 + 0.1 * t[2] ** 4)
    cfg = OptimizerConfig(maxiter=80)
    _, a = minimize(f, [0.1, 0.2, 0.3], cfg)
    _, b = minimize(f, [0.1, 0.2, 0.3], cfg)
    assert a.values == b.values
