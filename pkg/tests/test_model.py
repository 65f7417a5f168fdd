import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from agingpa.model import (
    AffineWeights, BoundedUniform, ConstantAging, CustomWeights, Degenerate, ExponentialAging,
    ExponentialFitness, GeneralExponential, LognormalAging, Pareto, PowerAging, PowerWeights,
    ProcessSpec, SubExponential, TabulatedAging, TimeChangedFitness, ValidationError, aging_eval,
    aging_inverse, classify_fitness_tail, classify_weights, fitness_mgf, fitness_sample, make_aging,
    make_fitness, make_weights,
)
from agingpa.numerics import integrate


def test_weight_examples():
    w = make_weights("affine", a=1, b=1)
    assert w(0) == 1 and w(2) == 3
    assert make_weights("power", c=1, q=2, shift=1)(3) == 16
    with pytest.raises(ValidationError):
        make_weights("affine", a=0, b=1)
    with pytest.raises(ValidationError):
        make_weights("power", c=1, q=2, shift=0)


def test_custom_weights_table_and_tail():
    w = CustomWeights((1.0, 2.0, 5.0), ("affine", 2.0))
    assert [w(k) for k in range(3)] == [1.0, 2.0, 5.0]
    assert w(3) == pytest.approx(7.0)
    assert w(4) == pytest.approx(9.0)


@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 4), st.integers(0, 50))
def test_scaled_weights(a, b, u, k):
    assert AffineWeights(a, b).scaled(u)(k) == pytest.approx(u * (a * k + b), rel=1e-13)
    assert PowerWeights(a, 1.5, b).scaled(u)(k) == pytest.approx(u * a * (k + b) ** 1.5, rel=1e-13)


def test_classify_weights():
    assert classify_weights(AffineWeights(1, 1)).tag == "Affine"
    sup = classify_weights(PowerWeights(1, 2, 1))
    assert sup.tag == "Superlinear"
    assert sup.extrapolated_limit == pytest.approx(math.pi**2 / 6, rel=1e-9)
    assert classify_weights(PowerWeights(1, 0.5, 1)).tag == "Sublinear"
    with pytest.raises(ValidationError):
        classify_weights(AffineWeights(1, 1), K=10)


def test_aging_examples():
    ag = make_aging("exponential", **{"lambda": 1})
    assert ag.G_inf == 1.0
    assert ag.G(1.0) == pytest.approx(0.6321205588, abs=1e-10)
    pw = make_aging("power", **{"lambda": 2})
    assert pw.G_inf == pytest.approx(1.0)
    assert pw.G_inv(0.5) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValidationError, match="PowerAging requires lambda > 1"):
        make_aging("power", **{"lambda": 0.5})


def test_aging_eval_and_inverse():
    assert aging_eval(ExponentialAging(1), 0) == (1.0, 0.0)
    assert aging_eval(PowerAging(2), 1) == pytest.approx((0.25, 0.5))
    g, G = aging_eval(ExponentialAging(0.5), 2)
    assert g == pytest.approx(0.3678794412, abs=1e-10)
    assert G == pytest.approx(1.2642411177, abs=1e-10)
    with pytest.raises(ValueError):
        aging_eval(ExponentialAging(1), -1.0)
    assert aging_inverse(ExponentialAging(1), 0.2) == pytest.approx(0.2231435513, abs=1e-10)
    assert aging_inverse(PowerAging(2), 0.5) == pytest.approx(1.0)
    assert aging_inverse(ExponentialAging(1), 1.2) is None


AGINGS = [
    ExponentialAging(0.7),
    PowerAging(2.5),
    LognormalAging(1.0, 1.0, 0.0),
    LognormalAging(2.0, 0.5, 1.5, normalized=True),
    TabulatedAging((0.0, 1.0, 3.0), (1.0, 0.5, 0.2), 0.8),
]


@pytest.mark.parametrize("ag", AGINGS, ids=lambda a: a.family)
def test_cumulative_matches_mpmath(ag):
    for t in [0.3, 1.0, 4.0]:
        ref = float(mpmath.quad(lambda x: float(ag.g(float(x))), [0, 1, 3, t] if t > 3 else [0, t]))
        assert ag.G(t) == pytest.approx(ref, rel=1e-9)
    ref_inf = float(mpmath.quad(lambda x: float(ag.g(float(x))), [0, 1, 3, 10, mpmath.inf]))
    assert ag.G_inf == pytest.approx(ref_inf, rel=1e-8)


@pytest.mark.parametrize("ag", AGINGS, ids=lambda a: a.family)
def test_inverse_round_trip(ag):
    u = np.linspace(0.01, 0.99, 25) * ag.G_inf
    np.testing.assert_allclose(ag.G(ag.G_inv(u)), u, rtol=1e-10)


@pytest.mark.parametrize("ag", AGINGS, ids=lambda a: a.family)
def test_dg_matches_finite_difference(ag):
    t = np.array([0.4, 1.7, 5.0])
    h = 1e-6
    fd = (ag.g(t + h) - ag.g(t - h)) / (2 * h)
    np.testing.assert_allclose(ag.dg(t), fd, rtol=1e-5, atol=1e-9)


def test_lognormal_normalized_has_unit_mass():
    assert LognormalAging(1.0, 1.0, 0.5, normalized=True).G_inf == pytest.approx(1.0, rel=1e-14)


def test_constant_aging_is_identity():
    ag = ConstantAging()
    assert not ag.integrable
    assert ag.G(2.5) == 2.5 and ag.G_inv(2.5) == 2.5


FITNESSES = [
    BoundedUniform(2.0),
    ExponentialFitness(2.0),
    GeneralExponential(3.0, 2.5),
    SubExponential(1.0, 1.0),
    SubExponential(2.0, 0.5),
    Pareto(2.5, 1.0),
]


@pytest.mark.parametrize("fd", FITNESSES, ids=lambda f: f.family)
def test_pdf_normalized(fd):
    lo = getattr(fd, "lower", 0.0)
    if math.isfinite(fd.upper):
        total = integrate(fd.pdf, lo, fd.upper, tol=1e-12).value
    else:
        total = float(mpmath.quad(lambda s: float(fd.pdf(float(s))), [lo, lo + 1, lo + 10, mpmath.inf]))
    assert total == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("fd", FITNESSES, ids=lambda f: f.family)
def test_ppf_inverts_cdf(fd):
    u = np.linspace(0.02, 0.98, 17)
    np.testing.assert_allclose(fd.cdf(fd.ppf(u)), u, atol=1e-10)


@pytest.mark.parametrize("fd", FITNESSES[:5], ids=lambda f: f.family)
def test_sampler_ks(fd):
    rng = np.random.default_rng(7)
    x = fitness_sample(fd, rng, 20000)
    assert stats.kstest(x, fd.cdf).pvalue > 1e-3


def test_mgf_examples():
    assert fitness_mgf(ExponentialFitness(2), 1.0) == pytest.approx(2.0)
    assert fitness_mgf(ExponentialFitness(2), 2.0) == math.inf
    assert fitness_mgf(Degenerate(1), 0.7) == pytest.approx(2.0137527075, abs=1e-10)
    assert fitness_mgf(ExponentialFitness(1.5), 1.0) == pytest.approx(3.0, rel=1e-12)
    assert fitness_mgf(Pareto(2.0, 1.0), 0.1) == math.inf
    with pytest.raises(ValueError):
        fitness_mgf(ExponentialFitness(2), -1.0)


@pytest.mark.parametrize("fd,x", [(GeneralExponential(3.0, 2.5), 1.2), (SubExponential(1.0, 1.0), 2.0),
                                  (BoundedUniform(2.0), 1.5)])
def test_mgf_matches_quadrature(fd, x):
    hi = fd.upper if math.isfinite(fd.upper) else mpmath.inf
    ref = float(mpmath.quad(lambda s: float(fd.pdf(float(s))) * mpmath.exp(x * s), [0, 1, hi]))
    assert fd.mgf(x) == pytest.approx(ref, rel=1e-9)


def test_subexponential_mass_example():
    fd = make_fitness("subexponential", theta=1, eps=1)
    assert integrate(fd.pdf, 0.0, tol=1e-12).value == pytest.approx(1.0, abs=1e-8)


def test_tail_classes():
    assert classify_fitness_tail(Pareto()).tag == "HeavyTailed"
    cls = classify_fitness_tail(ExponentialFitness(1.5))
    assert cls.tag == "GeneralExponential" and cls.theta == 1.5
    assert classify_fitness_tail(SubExponential(1, 0.5)).tag == "SubExponential"
    assert classify_fitness_tail(BoundedUniform(1.0)).tag == "Bounded"


def test_sampler_examples():
    rng = np.random.default_rng(1)
    assert np.all(fitness_sample(Degenerate(1), rng, 100) == 1.0)
    x = fitness_sample(make_fitness("exponential", theta=2), rng, 10**6)
    assert x.mean() == pytest.approx(0.5, abs=0.002)


def test_time_changed_fitness_law():
    fd = TimeChangedFitness(ExponentialAging(1.0), 2.0)
    # Z = 1 - e^{-T} with T ~ Exp(2) has density 2 (1 - z) on (0, 1)
    z = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(fd.pdf(z), 2 * (1 - z), rtol=1e-12)
    np.testing.assert_allclose(fd.cdf(fd.ppf(np.array([0.2, 0.7]))), [0.2, 0.7], rtol=1e-12)
    ref = float(mpmath.quad(lambda s: 2 * (1 - s) * mpmath.exp(1.3 * s), [0, 1]))
    assert fd.mgf(1.3) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValidationError):
        TimeChangedFitness(ConstantAging(), 1.0)


def test_fitness_validation():
    with pytest.raises(ValidationError):
        make_fitness("exponential", theta=-1)
    with pytest.raises(ValidationError):
        make_fitness("bogus")


def test_process_spec_defaults():
    spec = ProcessSpec(AffineWeights(1, 1))
    assert spec.stationary and not spec.has_fitness
