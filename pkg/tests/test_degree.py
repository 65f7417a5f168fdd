import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from agingpa.degree import (
    LhatUnderflowError, UnboundedFitnessError, UnsupportedSpecError, aging_bound, aging_fitness_pk,
    aging_pk, dynamical_exponent, expfit_cohort_pk, expfit_pk, lhat, lhat_coefficients, lhat_values,
    lifetime_pk, occupancy, read_csv, stationary_fitness_pk, stationary_pk,
)
from agingpa.malthus import forward_occupancy, malthusian
from agingpa.model import (
    AffineWeights, BoundedUniform, ConstantAging, Degenerate, ExponentialAging, ExponentialFitness,
    LognormalAging, PowerAging, PowerWeights, ProcessSpec, TimeChangedFitness,
)


def loglog_slope(ks, probs):
    return np.polyfit(np.log(ks), np.log(probs), 1)[0]


def test_stationary_exact_fractions():
    d = stationary_pk(AffineWeights(1, 1), 2.0, 100)
    for k in range(101):
        ref = Fraction(4, (k + 1) * (k + 2) * (k + 3))
        assert d.probs[k] == pytest.approx(float(ref), rel=1e-12)
    assert d.probs[:3] == pytest.approx([2 / 3, 1 / 6, 1 / 15], rel=1e-14)
    assert d.normalization_error < 1e-14


def test_stationary_slope_and_large_alpha():
    d = stationary_pk(AffineWeights(1, 1), 2.0, 10**4)
    ks = np.arange(100, 10**4 + 1)
    assert loglog_slope(ks, d.probs[ks]) == pytest.approx(-3.0, abs=0.05)
    assert stationary_pk(AffineWeights(1, 1), 1e9, 5).probs[0] == pytest.approx(1.0, abs=1e-8)


@given(st.floats(0.2, 4.0), st.floats(0.2, 4.0), st.integers(0, 300))
def test_stationary_normalization(a, b, kmax):
    d = stationary_pk(AffineWeights(a, b), a + b, kmax)
    assert d.normalization_error < 1e-12
    assert np.all(d.probs >= 0)


def test_stationary_fitness_degenerate_reduces():
    w = AffineWeights(1, 1)
    a = stationary_fitness_pk(w, Degenerate(1.0), 2.0, 40)
    b = stationary_pk(w, 2.0, 40)
    np.testing.assert_array_equal(a.probs, b.probs)


def test_stationary_fitness_uniform():
    w = AffineWeights(1, 1)
    fd = BoundedUniform(1.0)
    alpha = malthusian(ProcessSpec(w, fitness=fd)).alpha_star
    d = stationary_fitness_pk(w, fd, alpha, 400)
    assert d.normalization_error < 1e-6
    for k in [0, 1, 5, 20]:
        ref = mpmath.quad(lambda y: alpha / (alpha + y * (k + 1))
                          * mpmath.fprod([y * (i + 1) / (alpha + y * (i + 1)) for i in range(k)]), [0, 1])
        assert d.probs[k] == pytest.approx(float(ref), rel=1e-9)
    assert stationary_fitness_pk(w, BoundedUniform(1e-6), 2.0, 3).probs[0] == pytest.approx(1.0, abs=1e-5)


def test_stationary_fitness_refuses_unbounded():
    with pytest.raises(UnboundedFitnessError):
        stationary_fitness_pk(AffineWeights(1, 1), ExponentialFitness(2.0), 2.0, 10)


def test_occupancy_examples():
    spec = ProcessSpec(AffineWeights(1, 1))
    d0 = occupancy(spec, 0.0, 10)
    assert d0.probs[0] == 1.0 and np.all(d0.probs[1:] == 0)
    assert occupancy(spec, math.log(2), 5).probs[0] == pytest.approx(0.5, rel=1e-14)
    d = occupancy(spec, 1.0, 50)
    P, _ = forward_occupancy(AffineWeights(1, 1), [1.0], kmax=400)
    np.testing.assert_allclose(d.probs, P[0, :51], atol=1e-8)
    with pytest.raises(ValueError):
        occupancy(spec, 1.0, -1)


def test_lhat_constant_and_bounds():
    spec = ProcessSpec(AffineWeights(1, 1), ConstantAging())
    assert np.all(lhat_coefficients(spec, 2.0, 10).values == 1.0)
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1))
    alpha = malthusian(spec).alpha_star
    v0 = lhat(spec, 0, alpha)
    assert 0 < v0 <= 1
    # L-hat(0) = int e^{-alpha t} e^{-G} g dt / int e^{-alpha t} e^{-G} dt
    G = lambda t: 1 - mpmath.exp(-t)
    num = mpmath.quad(lambda t: mpmath.exp(-alpha * t - G(t) - t), [0, mpmath.inf])
    den = mpmath.quad(lambda t: mpmath.exp(-alpha * t - G(t)), [0, mpmath.inf])
    assert v0 == pytest.approx(float(num / den), rel=1e-10)
    coef = lhat_coefficients(spec, alpha, 20)
    assert np.all((coef.values > 0) & (coef.values <= 1))
    assert np.all(np.diff(coef.values) < 0)


def test_lhat_refuses_nonintegrable():
    with pytest.raises(UnsupportedSpecError):
        lhat_values(ProcessSpec(AffineWeights(1, 1), PowerAging(0.5, require_integrable=False)), 1.0, 5)


def test_recursion_identity():
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1))
    alpha = malthusian(spec).alpha_star
    L, lden = lhat_values(spec, alpha, 20)
    LP = np.exp(lden)
    f = spec.weights(np.arange(21))
    assert alpha * LP[0] + f[0] * L[0] * LP[0] == pytest.approx(1.0, abs=1e-9)
    for k in range(1, 21):
        resid = alpha * LP[k] + f[k] * L[k] * LP[k] - f[k - 1] * L[k - 1] * LP[k - 1]
        assert abs(resid) <= 1e-7 * LP[k - 1] * f[k - 1]


@pytest.fixture(scope="module")
def aging11():
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1))
    return spec, malthusian(spec).alpha_star


def test_aging_pk_normalization_and_bound(aging11):
    spec, alpha = aging11
    d = aging_pk(spec, alpha, 200)
    assert d.normalization_error < 1e-6
    assert np.all(d.probs <= aging_bound(spec, d.ks) * (1 + 1e-12))


def test_aging_pk_product_matches_direct(aging11):
    spec, alpha = aging11
    direct = aging_pk(spec, alpha, 20, method="direct")
    prod = aging_pk(spec, alpha, 20, method="product")
    np.testing.assert_allclose(prod.probs, direct.probs, rtol=1e-6)


def test_aging_pk_against_mpmath(aging11):
    spec, alpha = aging11
    d = aging_pk(spec, alpha, ks=[0, 3, 50])
    for k, p in zip(d.ks, d.probs):
        k = int(k)
        G = lambda t: 1 - mpmath.exp(-t)
        ref = mpmath.quad(lambda t: alpha * mpmath.exp(-alpha * t - G(t)) * (1 - mpmath.exp(-G(t))) ** k,
                          [0, 1, 10, mpmath.inf])
        assert p == pytest.approx(float(ref), rel=1e-9)


@given(st.floats(0.5, 2.0), st.floats(0.5, 3.0), st.floats(0.3, 1.0))
def test_aging_pk_normalizes(a, b, lam):
    spec = ProcessSpec(AffineWeights(a, b), ExponentialAging(lam))
    assume((b / a) * math.expm1(a / lam) > 1.05)
    alpha = malthusian(spec).alpha_star
    d = aging_pk(spec, alpha, 60)
    assert d.normalization_error < 1e-8
    assert np.all(d.probs <= aging_bound(spec, d.ks) * (1 + 1e-10))


def test_aging_pk_power_weights_product_path():
    spec = ProcessSpec(PowerWeights(1.0, 0.7, 1.0), ExponentialAging(0.3))
    alpha = malthusian(spec).alpha_star
    d = aging_pk(spec, alpha, 60)
    assert d.method == "OdeRecursion"
    assert d.normalization_error < 1e-8
    with pytest.raises(LhatUnderflowError):
        aging_pk(spec, alpha, 400)


def test_aging_fitness_degenerate_reduces(aging11):
    spec, alpha = aging11
    a = aging_fitness_pk(spec, alpha, 40)
    b = aging_pk(spec, alpha, 40)
    np.testing.assert_allclose(a.probs, b.probs, rtol=1e-8)


def test_aging_fitness_uniform_bound():
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1), BoundedUniform(1.5))
    alpha = malthusian(spec).alpha_star
    d = aging_fitness_pk(spec, alpha, 150)
    assert d.normalization_error < 1e-6
    assert np.all(d.probs <= aging_bound(spec, d.ks) * (1 + 1e-10))


def test_aging_fitness_matches_expfit(expfit_spec):
    alpha = malthusian(expfit_spec).alpha_star
    quad2d = aging_fitness_pk(expfit_spec, alpha, 30)
    closed = expfit_pk(expfit_spec, alpha, 30)
    np.testing.assert_allclose(quad2d.probs, closed.probs, rtol=1e-6)
    assert closed.normalization_error < 1e-10


def test_expfit_matches_time_changed_representation(expfit_spec):
    alpha = malthusian(expfit_spec).alpha_star
    rep = stationary_fitness_pk(expfit_spec.weights, TimeChangedFitness(expfit_spec.aging, alpha), 1.5, 30)
    direct = expfit_pk(expfit_spec, alpha, 30)
    np.testing.assert_allclose(rep.probs, direct.probs, rtol=1e-6)


def test_expfit_cohort_examples(expfit_spec):
    t_half = math.log(2)
    assert expfit_cohort_pk(expfit_spec, t_half, 5).probs[0] == pytest.approx(0.75, rel=1e-14)
    assert expfit_cohort_pk(expfit_spec, 0.0, 5).probs[0] == 1.0
    d = expfit_cohort_pk(expfit_spec, t_half, 10**4)
    ks = np.arange(100, 10**4 + 1)
    assert loglog_slope(ks, d.probs[ks]) == pytest.approx(-4.0, abs=0.05)
    assert d.normalization_error < 1e-13
    with pytest.raises(UnsupportedSpecError):
        expfit_cohort_pk(ProcessSpec(AffineWeights(1, 1), ExponentialAging(1), BoundedUniform(1.0)), 1.0, 5)


@pytest.mark.parametrize("G", [0.25, 0.5, 0.9])
def test_expfit_cohort_matches_product_form(G):
    theta, kmax = 1.5, 60
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1), ExponentialFitness(theta))
    d = expfit_cohort_pk(spec, -math.log1p(-G), kmax)
    f = np.arange(kmax + 1) + 1.0
    r = f * G / (theta + f * G)
    ref = theta / (theta + f * G) * np.concatenate([[1.0], np.cumprod(r)[:-1]])
    np.testing.assert_allclose(d.probs, ref, rtol=1e-11)


def test_lifetime_examples(expfit_spec):
    q = lifetime_pk(expfit_spec, 10**4)
    assert q.probs[0] == pytest.approx(0.6, rel=1e-14)
    ks = np.arange(100, 10**4 + 1)
    assert loglog_slope(ks, q.probs[ks]) == pytest.approx(-2.5, abs=0.05)
    spec = ProcessSpec(AffineWeights(1, 1), ExponentialAging(1))
    q = lifetime_pk(spec, 200)
    k = np.arange(201)
    np.testing.assert_allclose(q.probs, math.exp(-1) * (1 - math.exp(-1)) ** k, rtol=1e-12)
    assert q.normalization_error < 1e-8
    with pytest.raises(UnsupportedSpecError):
        lifetime_pk(ProcessSpec(AffineWeights(1, 1)), 10)


def test_cohort_converges_to_lifetime(expfit_spec):
    t = -math.log(1e-9)  # G(t) = G_inf (1 - 1e-9)
    diff = expfit_cohort_pk(expfit_spec, t, 500).probs - lifetime_pk(expfit_spec, 500).probs
    assert np.max(np.abs(diff)) <= 1e-6


def test_dynamical_exponent(expfit_spec):
    assert dynamical_exponent(expfit_spec, math.log(2)) == pytest.approx(4.0)
    assert dynamical_exponent(expfit_spec, math.inf) == pytest.approx(2.5)
    taus = [dynamical_exponent(expfit_spec, t) for t in [1e-6, 0.01, 0.1, 1, 10]]
    assert taus[0] > 1e5 and np.all(np.diff(taus) < 0)
    with pytest.raises(UnsupportedSpecError):
        dynamical_exponent(ProcessSpec(AffineWeights(1, 1), ExponentialAging(1)), 1.0)


def test_lognormal_aging_tail_is_exponential():
    spec = ProcessSpec(AffineWeights(1, 1), LognormalAging(1.0, 1.0, 0.5, normalized=True))
    alpha = malthusian(spec).alpha_star
    d = aging_pk(spec, alpha, 300)
    assert np.all(d.probs <= aging_bound(spec, d.ks) * (1 + 1e-10))
    assert d.normalization_error < 1e-8


def test_csv_round_trip(tmp_path, aging11):
    spec, alpha = aging11
    d = aging_pk(spec, alpha, 50)
    d.to_csv(tmp_path / "p.csv")
    ks, probs = read_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(ks, d.ks)
    np.testing.assert_array_equal(probs, d.probs)


def test_expfit_normalizes_past_stirling_switch(expfit_spec):
    alpha = malthusian(expfit_spec).alpha_star
    for kmax in (100, 200):
        d = expfit_pk(expfit_spec, alpha, kmax)
        assert d.normalization_error < 1e-10
        assert np.all(np.isfinite(d.log_probs))


@pytest.mark.parametrize("G", [1e-300, 1e-100, 1e-18, 1e-9])
def test_expfit_cohort_young_ages(expfit_spec, G):
    # c = theta/(a G) is huge: P_0 ~ 1 - 2/c and P_k ~ k!/c^k
    d = expfit_cohort_pk(expfit_spec, -math.log1p(-G), 100)
    assert np.all(d.log_probs <= 0)
    assert d.probs.sum() + d.tail_mass == pytest.approx(1.0, abs=1e-14)
    c = 1.5 / G
    assert d.log_probs[1] == pytest.approx(-math.log(c) - math.log1p(3 / c), rel=1e-12)
