import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from agingpa.numerics import (
    Bracket, BracketError, IntegrationError, find_root, integrate, integrate_vec, log_gamma,
    orthant_probability,
)


def test_log_gamma_matches_mpmath():
    for x in [1e-3, 0.5, 1.0, 2.5, 17.0, 1e4]:
        assert log_gamma(x) == pytest.approx(float(mpmath.loggamma(x)), rel=1e-14, abs=1e-14)


def test_log_gamma_array_and_domain():
    x = np.array([0.5, 3.0, 10.0])
    np.testing.assert_allclose(log_gamma(x), [math.lgamma(v) for v in x], rtol=1e-14)
    with pytest.raises(ValueError):
        log_gamma(0.0)
    with pytest.raises(ValueError):
        log_gamma(np.array([1.0, -2.0]))


def test_integrate_polynomial_and_exponential():
    assert integrate(lambda x: x**2, 0.0, 1.0).value == pytest.approx(1 / 3, rel=1e-14)
    assert integrate(lambda t: np.exp(-t), 0.0).value == pytest.approx(1.0, abs=1e-10)
    res = integrate(lambda t: np.exp(-t), 0.0, tol=1e-12, decay_rate=1.0)
    assert res.value == pytest.approx(1.0, abs=1e-11)


def test_integrate_against_mpmath_oscillatory():
    f = lambda t: np.exp(-2 * t) * np.cos(3 * t) ** 2
    ref = float(mpmath.quad(lambda t: mpmath.exp(-2 * t) * mpmath.cos(3 * t) ** 2, [0, mpmath.inf]))
    assert integrate(f, 0.0, tol=1e-13).value == pytest.approx(ref, rel=1e-11)


def test_integrate_scalar_only_callable():
    assert integrate(lambda x: math.sin(x), 0.0, math.pi).value == pytest.approx(2.0, rel=1e-13)


def test_integrate_budget_exhaustion_raises():
    with pytest.raises(IntegrationError) as err:
        integrate(lambda x: np.where(x > 0, x ** -0.999, 0.0), 0.0, 1.0, tol=1e-14, max_intervals=20)
    assert err.value.result is not None


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(0.1, 3.0))
def test_integrate_polynomials_exact(coefs, b):
    # a 15-point Kronrod rule is exact for polynomials of degree <= 22
    p = np.polynomial.Polynomial(coefs)
    exact = p.integ()(b) - p.integ()(0.0)
    assert integrate(p, 0.0, b).value == pytest.approx(exact, rel=1e-12, abs=1e-12)


def test_integrate_vec_componentwise_relative_accuracy():
    rates = np.array([0.5, 1.0, 40.0])
    vals, errs = integrate_vec(lambda t: np.exp(-np.outer(t, rates)) * 1e-250, 0.0, 80.0, rtol=1e-12, atol=1e-320)
    expected = (1 - np.exp(-80 * rates)) / rates * 1e-250
    np.testing.assert_allclose(vals, expected, rtol=1e-11)
    assert np.all(errs <= 1e-11 * vals)


def test_find_root_and_bracket_errors():
    assert find_root(lambda x: x * x - 4, (0.0, 5.0)) == pytest.approx(2.0, abs=1e-12)
    assert find_root(lambda x: math.exp(x) - 3, Bracket(0.0, 2.0), tol=1e-10) == pytest.approx(math.log(3), abs=1e-10)
    with pytest.raises(BracketError):
        find_root(lambda x: x * x + 1, (0.0, 1.0))
    with pytest.raises(BracketError):
        Bracket(1.0, 1.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.95, 0.95), st.floats(0.2, 3), st.floats(0.2, 3))
def test_orthant_matches_scipy(l1, l2, rho, s1, s2):
    cov = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
    # P(X >= l) = P(-X <= -l)
    ref = stats.multivariate_normal(mean=[0, 0], cov=cov).cdf([-l1, -l2])
    assert orthant_probability((l1, l2), cov) == pytest.approx(ref, abs=2e-6)


def test_orthant_limits():
    cov = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert orthant_probability((-50, -50), cov) == pytest.approx(1.0, abs=1e-12)
    assert orthant_probability((0.0, 0.0), np.eye(2)) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(ValueError):
        orthant_probability((0, 0), np.ones((2, 2)))
