"""Ingredients of the birth process: preferential-attachment weights f_k,
aging functions g(t) and fitness distributions Y, plus their classification.

All objects are frozen dataclasses.  Evaluators accept scalars or numpy
arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, special

from .numerics import integrate

__all__ = [
    "ValidationError",
    "WeightSequence", "AffineWeights", "PowerWeights", "CustomWeights", "WeightClass",
    "make_weights", "classify_weights",
    "AgingFunction", "ExponentialAging", "PowerAging", "LognormalAging", "ConstantAging",
    "TabulatedAging", "make_aging", "aging_eval", "aging_inverse",
    "FitnessDistribution", "Degenerate", "BoundedUniform", "ExponentialFitness",
    "GeneralExponential", "SubExponential", "Pareto", "CustomFitness", "TimeChangedFitness", "TailClass",
    "make_fitness", "fitness_mgf", "classify_fitness_tail", "fitness_sample",
    "ProcessSpec",
]


class ValidationError(ValueError):
    pass


def _positive(name, value):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


# ---------------------------------------------------------------- weights


class WeightSequence:
    family = "abstract"

    def __call__(self, k):
        raise NotImplementedError

    def affine_params(self):
        """(a, b) when f_k = a k + b exactly, else None."""
        return None

    def tail_affine(self):
        """(K, a, b) such that f_k = a k + b for every k >= K, else None."""
        ab = self.affine_params()
        return (0, *ab) if ab else None

    def scaled(self, u: float) -> "WeightSequence":
        raise NotImplementedError


@dataclass(frozen=True)
class AffineWeights(WeightSequence):
    a: float
    b: float
    family = "affine"

    def __post_init__(self):
        _positive("weights.a", self.a)
        _positive("weights.b", self.b)

    def __call__(self, k):
        return self.a * np.asarray(k, dtype=float) + self.b if np.ndim(k) else self.a * k + self.b

    def affine_params(self):
        return self.a, self.b

    def scaled(self, u):
        return AffineWeights(u * self.a, u * self.b)


@dataclass(frozen=True)
class PowerWeights(WeightSequence):
    """f_k = c (k + shift)^q."""

    c: float
    q: float
    shift: float = 1.0
    family = "power"

    def __post_init__(self):
        _positive("weights.c", self.c)
        _positive("weights.q", self.q)
        _positive("weights.shift", self.shift)

    def __call__(self, k):
        if np.ndim(k):
            return self.c * (np.asarray(k, dtype=float) + self.shift) ** self.q
        return self.c * (k + self.shift) ** self.q

    def affine_params(self):
        if self.q == 1.0:
            return self.c, self.c * self.shift
        return None

    def scaled(self, u):
        return PowerWeights(u * self.c, self.q, self.shift)


@dataclass(frozen=True)
class CustomWeights(WeightSequence):
    """Tabulated f_0..f_{n-1} continued by a tail rule.

    ``tail = ("affine", slope)`` continues f_k = f_{n-1} + slope (k - n + 1);
    ``tail = ("power", q)`` continues f_k = f_{n-1} ((k + 1) / n)^q.
    """

    table: tuple
    tail: tuple = ("affine", 1.0)
    family = "custom"

    def __post_init__(self):
        tab = tuple(float(v) for v in self.table)
        if not tab:
            raise ValidationError("weights.table must be non-empty")
        if any(not v > 0 for v in tab):
            raise ValidationError("weights.table entries must be positive")
        if any(b < a for a, b in zip(tab, tab[1:])):
            raise ValidationError("weights.table must be non-decreasing")
        kind, par = self.tail
        if kind not in ("affine", "power") or not par >= 0:
            raise ValidationError(f"unsupported weights.tail {self.tail!r}")
        object.__setattr__(self, "table", tab)
        object.__setattr__(self, "tail", (kind, float(par)))

    def __call__(self, k):
        n = len(self.table)
        tab = np.asarray(self.table)
        kk = np.asarray(k, dtype=float)
        kind, par = self.tail
        last = tab[-1]
        if kind == "affine":
            ext = last + par * (kk - n + 1)
        else:
            ext = last * ((kk + 1) / n) ** par
        idx = np.clip(kk.astype(int), 0, n - 1)
        out = np.where(kk < n, tab[idx], ext)
        return out if np.ndim(k) else float(out)

    def tail_affine(self):
        kind, par = self.tail
        n = len(self.table)
        if kind == "affine" and par > 0:
            return n, par, self.table[-1] - par * (n - 1)
        if kind == "power" and par == 1.0:
            return n, self.table[-1] / n, self.table[-1] / n
        return None

    def scaled(self, u):
        kind, par = self.tail
        # an affine tail slope is in weight units; a power exponent is not
        tail = (kind, u * par) if kind == "affine" else self.tail
        return CustomWeights(tuple(u * v for v in self.table), tail)


@dataclass(frozen=True)
class WeightClass:
    tag: str  # "Sublinear" | "Affine" | "Superlinear"
    partial_sum: float
    extrapolated_limit: float
    method: str


def make_weights(family: str, **params) -> WeightSequence:
    family = family.lower()
    if family == "affine":
        return AffineWeights(params.get("a", 1.0), params.get("b", 1.0))
    if family == "power":
        return PowerWeights(params.get("c", 1.0), params.get("q", 1.0), params.get("shift", 1.0))
    if family == "custom":
        return CustomWeights(tuple(params["table"]), tuple(params.get("tail", ("affine", 1.0))))
    raise ValidationError(f"unknown weights family {family!r}")


def _reciprocal_partial_sum(w, K, chunk=1 << 18):
    total = 0.0
    for lo in range(0, K, chunk):
        k = np.arange(lo, min(K, lo + chunk), dtype=float)
        total += math.fsum(1.0 / w(k))
    return total


def classify_weights(w: WeightSequence, K: int = 10**6, tol: float = 1e-12) -> WeightClass:
    """Decide whether sum 1/f_k converges (superlinear), from the family
    exponent or, for custom weights, from the declared tail rule.  The
    partial sum to K is always reported, with a tail-integral extrapolation
    of the limit when it is finite."""
    if K < 1000:
        raise ValidationError("classify_weights needs K >= 1000")
    partial = _reciprocal_partial_sum(w, K)
    if isinstance(w, AffineWeights):
        return WeightClass("Affine", partial, math.inf, "exact: affine family")
    if isinstance(w, PowerWeights):
        q, c, sh = w.q, w.c, w.shift
        if q > 1:
            # Euler-Maclaurin tail: int_K^inf + f(K)/2
            x = K + sh
            tail = x ** (1 - q) / (c * (q - 1)) + 0.5 / (c * x**q)
            return WeightClass("Superlinear", partial, partial + tail, "exact: power exponent q>1")
        tag = "Affine" if q == 1 else "Sublinear"
        return WeightClass(tag, partial, math.inf, f"exact: power exponent q={q:g}")
    kind, par = w.tail
    if kind == "power" and par > 1:
        n = len(w.table)
        scale = w.table[-1] / n**par
        x = K + 1
        tail = x ** (1 - par) / (scale * (par - 1)) + 0.5 / (scale * x**par)
        return WeightClass("Superlinear", partial, partial + tail, "partial sum + declared power tail")
    if kind == "affine":
        tag = "Affine" if par > 0 else "Sublinear"
    else:
        tag = "Affine" if par == 1 else "Sublinear"
    return WeightClass(tag, partial, math.inf, "partial sum + declared tail rule")


# ---------------------------------------------------------------- aging


class AgingFunction:
    """g(t) > 0 with cumulative G, inverse G_inv and total mass G_inf."""

    family = "abstract"
    G_inf = math.inf

    @property
    def integrable(self):
        return math.isfinite(self.G_inf)

    def g(self, t):
        raise NotImplementedError

    def dg(self, t):
        raise NotImplementedError

    def G(self, t):
        raise NotImplementedError

    def G_inv(self, u):
        raise NotImplementedError

    # scalar fast paths used by the simulator
    def G_scalar(self, t: float) -> float:
        return float(self.G(t))

    def G_inv_scalar(self, u: float) -> float:
        return float(self.G_inv(u))


@dataclass(frozen=True)
class ExponentialAging(AgingFunction):
    lam: float
    family = "exponential"

    def __post_init__(self):
        _positive("aging.lambda", self.lam)

    @property
    def G_inf(self):
        return 1.0 / self.lam

    def g(self, t):
        return np.exp(-self.lam * np.asarray(t, dtype=float))

    def dg(self, t):
        return -self.lam * self.g(t)

    def G(self, t):
        return -np.expm1(-self.lam * np.asarray(t, dtype=float)) / self.lam

    def G_inv(self, u):
        return -np.log1p(-self.lam * np.asarray(u, dtype=float)) / self.lam

    def G_scalar(self, t):
        return -math.expm1(-self.lam * t) / self.lam

    def G_inv_scalar(self, u):
        return -math.log1p(-self.lam * u) / self.lam


@dataclass(frozen=True)
class PowerAging(AgingFunction):
    """g(t) = (1 + t)^(-lam)."""

    lam: float
    require_integrable: bool = True
    family = "power"

    def __post_init__(self):
        _positive("aging.lambda", self.lam)
        if self.require_integrable and not self.lam > 1:
            raise ValidationError("PowerAging requires lambda > 1")

    @property
    def G_inf(self):
        return 1.0 / (self.lam - 1.0) if self.lam > 1 else math.inf

    def g(self, t):
        return (1.0 + np.asarray(t, dtype=float)) ** (-self.lam)

    def dg(self, t):
        return -self.lam * (1.0 + np.asarray(t, dtype=float)) ** (-self.lam - 1)

    def G(self, t):
        x = np.log1p(np.asarray(t, dtype=float))
        if self.lam == 1:
            return x
        return -np.expm1((1 - self.lam) * x) / (self.lam - 1)

    def G_inv(self, u):
        u = np.asarray(u, dtype=float)
        if self.lam == 1:
            return np.expm1(u)
        return np.expm1(np.log1p(-(self.lam - 1) * u) / (1 - self.lam))

    def G_scalar(self, t):
        x = math.log1p(t)
        if self.lam == 1:
            return x
        return -math.expm1((1 - self.lam) * x) / (self.lam - 1)

    def G_inv_scalar(self, u):
        if self.lam == 1:
            return math.expm1(u)
        return math.expm1(math.log1p(-(self.lam - 1) * u) / (1 - self.lam))


@dataclass(frozen=True)
class LognormalAging(AgingFunction):
    """g(t) = l1 exp(-l2 (log(1+t) - l3)^2).

    With x = log(1+t) the cumulative is a Gaussian integral, so G and its
    inverse are closed forms in erf/erfcinv.  ``normalized=True`` rescales
    l1 so that G_inf = 1.
    """

    l1: float
    l2: float
    l3: float
    normalized: bool = False
    family = "lognormal"
    _scale: float = field(init=False, repr=False, compare=False)
    _m: float = field(init=False, repr=False, compare=False)
    _K: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _positive("aging.l1", self.l1)
        _positive("aging.l2", self.l2)
        if not (math.isfinite(self.l3) and self.l3 >= 0):
            raise ValidationError("aging.l3 must be >= 0")
        m = self.l3 + 0.5 / self.l2
        K = self.l1 * math.exp(self.l3 + 0.25 / self.l2) * math.sqrt(math.pi / self.l2) / 2
        total = K * (1 + math.erf(math.sqrt(self.l2) * m))
        scale = 1.0 / total if self.normalized else 1.0
        object.__setattr__(self, "_scale", scale)
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_K", K * scale)

    @property
    def amplitude(self):
        return self.l1 * self._scale

    @property
    def G_inf(self):
        return self._K * (1 + math.erf(math.sqrt(self.l2) * self._m))

    def g(self, t):
        x = np.log1p(np.asarray(t, dtype=float))
        return self.amplitude * np.exp(-self.l2 * (x - self.l3) ** 2)

    def dg(self, t):
        t = np.asarray(t, dtype=float)
        x = np.log1p(t)
        return self.g(t) * (-2 * self.l2 * (x - self.l3) / (1 + t))

    def G(self, t):
        x = np.log1p(np.asarray(t, dtype=float))
        r = math.sqrt(self.l2)
        # erfc form keeps relative precision for large t
        return self._K * (special.erfc(-r * self._m) - special.erfc(r * (x - self._m)))

    def G_inv(self, u):
        u = np.asarray(u, dtype=float)
        r = math.sqrt(self.l2)
        x = self._m + special.erfcinv((self.G_inf - u) / self._K) / r
        t = np.expm1(x)
        # two Newton steps on G(t) = u
        for _ in range(2):
            gt = self.g(t)
            t = np.where(gt > 0, t - (self.G(t) - u) / np.where(gt > 0, gt, 1.0), t)
            t = np.maximum(t, 0.0)
        return t

    def G_scalar(self, t):
        x = math.log1p(t)
        r = math.sqrt(self.l2)
        return self._K * (math.erfc(-r * self._m) - math.erfc(r * (x - self._m)))


@dataclass(frozen=True)
class ConstantAging(AgingFunction):
    family = "constant"

    def g(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def dg(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def G(self, t):
        return np.asarray(t, dtype=float) * 1.0

    def G_inv(self, u):
        return np.asarray(u, dtype=float) * 1.0

    def G_scalar(self, t):
        return t

    def G_inv_scalar(self, u):
        return u


@dataclass(frozen=True)
class TabulatedAging(AgingFunction):
    """Piecewise-linear g on the knots, continued by g(T) exp(-rate (t - T))."""

    times: tuple
    values: tuple
    tail_rate: float = 1.0
    family = "tabulated"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 2 or t.size != v.size:
            raise ValidationError("aging.times and aging.values must be equal-length lists (>= 2)")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValidationError("aging.times must start at 0 and increase strictly")
        if np.any(v <= 0):
            raise ValidationError("aging.values must be positive")
        if not self.tail_rate >= 0:
            raise ValidationError("aging.tail_rate must be >= 0")
        object.__setattr__(self, "times", tuple(t))
        object.__setattr__(self, "values", tuple(v))

    @property
    def _cum(self):
        t, v = np.asarray(self.times), np.asarray(self.values)
        return np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])

    @property
    def G_inf(self):
        if self.tail_rate == 0:
            return math.inf
        return float(self._cum[-1] + self.values[-1] / self.tail_rate)

    def g(self, t):
        t = np.asarray(t, dtype=float)
        T, gT = self.times[-1], self.values[-1]
        inside = np.interp(t, self.times, self.values)
        return np.where(t <= T, inside, gT * np.exp(-self.tail_rate * (t - T)))

    def dg(self, t):
        t = np.asarray(t, dtype=float)
        tt, vv = np.asarray(self.times), np.asarray(self.values)
        idx = np.clip(np.searchsorted(tt, t, side="right") - 1, 0, tt.size - 2)
        slope = (vv[idx + 1] - vv[idx]) / (tt[idx + 1] - tt[idx])
        return np.where(t <= tt[-1], slope, -self.tail_rate * self.g(t))

    def G(self, t):
        t = np.asarray(t, dtype=float)
        tt, vv, cum = np.asarray(self.times), np.asarray(self.values), self._cum
        T = tt[-1]
        idx = np.clip(np.searchsorted(tt, t, side="right") - 1, 0, tt.size - 2)
        dt = np.minimum(t, T) - tt[idx]
        slope = (vv[idx + 1] - vv[idx]) / (tt[idx + 1] - tt[idx])
        inside = cum[idx] + vv[idx] * dt + 0.5 * slope * dt * dt
        over = np.maximum(t - T, 0.0)
        if self.tail_rate == 0:
            tail = vv[-1] * over
        else:
            tail = vv[-1] * -np.expm1(-self.tail_rate * over) / self.tail_rate
        return np.where(t <= T, inside, cum[-1] + tail)

    def G_inv(self, u):
        u = np.asarray(u, dtype=float)
        tt, vv, cum = np.asarray(self.times), np.asarray(self.values), self._cum
        idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, tt.size - 2)
        slope = (vv[idx + 1] - vv[idx]) / (tt[idx + 1] - tt[idx])
        r = u - cum[idx]
        # solve v dt + slope dt^2 / 2 = r for dt >= 0
        disc = np.sqrt(np.maximum(vv[idx] ** 2 + 2 * slope * r, 0.0))
        dt = np.where(np.abs(slope) > 1e-14, 2 * r / (vv[idx] + disc), r / vv[idx])
        inside = tt[idx] + dt
        over = u - cum[-1]
        if self.tail_rate == 0:
            tail = tt[-1] + over / vv[-1]
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                tail = tt[-1] - np.log1p(-self.tail_rate * over / vv[-1]) / self.tail_rate
        return np.where(u <= cum[-1], inside, tail)


def make_aging(family: str, **params) -> AgingFunction:
    family = family.lower()
    if family in ("constant", "none"):
        return ConstantAging()
    if family == "exponential":
        return ExponentialAging(params.get("lambda", 1.0))
    if family == "power":
        return PowerAging(params.get("lambda", 2.0), params.get("require_integrable", True))
    if family == "lognormal":
        return LognormalAging(params.get("l1", 1.0), params.get("l2", 1.0), params.get("l3", 0.0),
                              params.get("normalized", False))
    if family == "tabulated":
        return TabulatedAging(tuple(params["times"]), tuple(params["values"]), params.get("tail_rate", 1.0))
    raise ValidationError(f"unknown aging family {family!r}")


def aging_eval(ag: AgingFunction, t: float) -> tuple[float, float]:
    if not t >= 0:
        raise ValueError(f"aging_eval domain error: t={t} must be >= 0")
    return float(ag.g(t)), float(ag.G(t))


def aging_inverse(ag: AgingFunction, u: float):
    """t with G(t) = u, or None when u lies beyond the total mass G_inf."""
    if not u >= 0:
        raise ValueError(f"aging_inverse domain error: u={u} must be >= 0")
    if u >= ag.G_inf:
        return None
    return float(ag.G_inv(u))


# ---------------------------------------------------------------- fitness


@dataclass(frozen=True)
class TailClass:
    tag: str  # "Bounded" | "GeneralExponential" | "SubExponential" | "HeavyTailed"
    theta: float | None = None


class FitnessDistribution:
    """Law of the fitness Y > 0.

    Subclasses provide pdf, cdf, ppf, mgf and, for smooth densities, the
    first two derivatives of log pdf (used by the 2-D saddle point).
    """

    family = "abstract"
    degenerate = False
    upper = math.inf  # supremum of the support
    lower = 0.0

    def pdf(self, s):
        raise NotImplementedError

    def logpdf(self, s):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(s))

    def cdf(self, s):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def mgf(self, x: float) -> float:
        raise NotImplementedError

    def mgf_m1(self, x: float) -> float:
        """phi(x) - 1, accurate for small x."""
        return self.mgf(x) - 1.0

    @property
    def mgf_abscissa(self) -> float:
        """sup{x : phi(x) < inf}."""
        return math.inf

    def dlogpdf(self, s):
        raise NotImplementedError

    def d2logpdf(self, s):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return integrate(lambda s: s * self.pdf(s), self.lower, self.upper, tol=1e-12).value

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return self.ppf(u) if size is not None else float(self.ppf(u))

    def ppf_scalar(self, u: float) -> float:
        return float(self.ppf(u))


@dataclass(frozen=True)
class Degenerate(FitnessDistribution):
    value: float = 1.0
    family = "degenerate"
    degenerate = True

    def __post_init__(self):
        _positive("fitness.value", self.value)

    @property
    def upper(self):
        return self.value

    @property
    def lower(self):
        return self.value

    def cdf(self, s):
        return np.where(np.asarray(s) >= self.value, 1.0, 0.0)

    def ppf(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value) if np.ndim(u) else self.value

    def ppf_scalar(self, u):
        return self.value

    def mgf(self, x):
        return math.exp(x * self.value)

    def mgf_m1(self, x):
        return math.expm1(x * self.value)

    @property
    def mean(self):
        return self.value


@dataclass(frozen=True)
class BoundedUniform(FitnessDistribution):
    gamma: float
    family = "uniform"

    def __post_init__(self):
        _positive("fitness.gamma", self.gamma)

    @property
    def upper(self):
        return self.gamma

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where((s >= 0) & (s <= self.gamma), 1.0 / self.gamma, 0.0)

    def cdf(self, s):
        return np.clip(np.asarray(s, dtype=float) / self.gamma, 0.0, 1.0)

    def ppf(self, u):
        return np.asarray(u, dtype=float) * self.gamma if np.ndim(u) else u * self.gamma

    def ppf_scalar(self, u):
        return u * self.gamma

    def mgf(self, x):
        y = x * self.gamma
        return 1.0 if y == 0 else math.expm1(y) / y

    def mgf_m1(self, x):
        y = x * self.gamma
        if abs(y) < 1e-5:
            return y / 2 + y * y / 6
        return (math.expm1(y) - y) / y

    def dlogpdf(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2logpdf(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    @property
    def mean(self):
        return self.gamma / 2


@dataclass(frozen=True)
class GeneralExponential(FitnessDistribution):
    """mu(s) = C h(s) exp(-theta s) with h(s) = s^(shape-1) by default
    (a Gamma law), or a user-supplied h normalized by quadrature."""

    theta: float
    shape: float = 1.0
    h: Callable | None = field(default=None, compare=False)
    family = "general_exponential"

    def __post_init__(self):
        _positive("fitness.theta", self.theta)
        _positive("fitness.shape", self.shape)
        if self.h is not None:
            c = integrate(lambda s: self.h(s) * np.exp(-self.theta * s), 0.0, tol=1e-13,
                          decay_rate=self.theta / 2).value
            object.__setattr__(self, "_C", 1.0 / c)
            object.__setattr__(self, "_table", _inverse_cdf_table(self.pdf, 0.0, self._s_max()))

    def _s_max(self):
        return 60.0 / self.theta + 10.0

    @property
    def mgf_abscissa(self):
        return self.theta

    def logpdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.h is not None:
            with np.errstate(divide="ignore"):
                return np.log(self._C * self.h(s)) - self.theta * s
        k = self.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            return k * math.log(self.theta) + (k - 1) * np.log(s) - self.theta * s - math.lgamma(k)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(invalid="ignore"):
            return np.where(s > 0, np.exp(self.logpdf(np.where(s > 0, s, 1.0))), 0.0)

    def cdf(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        if self.h is not None:
            return self._table.cdf(s)
        return special.gammainc(self.shape, self.theta * s)

    def ppf(self, u):
        if self.h is not None:
            return self._table.ppf(u)
        return special.gammaincinv(self.shape, u) / self.theta

    def ppf_scalar(self, u):
        if self.h is None and self.shape == 1.0:
            return -math.log1p(-u) / self.theta
        return float(self.ppf(u))

    def mgf(self, x):
        if x >= self.theta:
            return math.inf
        if self.h is not None:
            return integrate(lambda s: np.exp(self.logpdf(s) + x * s), 0.0, tol=1e-13,
                             decay_rate=(self.theta - x) / 2).value
        return (self.theta / (self.theta - x)) ** self.shape

    def mgf_m1(self, x):
        if x >= self.theta:
            return math.inf
        if self.h is not None:
            return self.mgf(x) - 1.0
        return math.expm1(-self.shape * math.log1p(-x / self.theta))

    def dlogpdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.h is not None:
            eps = 1e-5 * np.maximum(s, 1.0)
            return (np.log(self.h(s + eps)) - np.log(self.h(s - eps))) / (2 * eps) - self.theta
        return (self.shape - 1) / s - self.theta

    def d2logpdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.h is not None:
            eps = 1e-4 * np.maximum(s, 1.0)
            lh = lambda x: np.log(self.h(x))
            return (lh(s + eps) - 2 * lh(s) + lh(s - eps)) / eps**2
        return -(self.shape - 1) / s**2

    @property
    def mean(self):
        if self.h is not None:
            return super().mean
        return self.shape / self.theta


def ExponentialFitness(theta: float) -> GeneralExponential:
    """Exp(theta) fitness, i.e. the general-exponential class with h = 1."""
    return GeneralExponential(theta, 1.0)


@dataclass(frozen=True)
class SubExponential(FitnessDistribution):
    """mu(s) = C exp(-theta s^(1+eps)), C = (1+eps) theta^(1/(1+eps)) / Gamma(1/(1+eps)).

    If W ~ Gamma(1/(1+eps)) then (W/theta)^(1/(1+eps)) has this law, which
    gives an exact inverse CDF through the regularized incomplete gamma.
    """

    theta: float
    eps: float
    family = "subexponential"

    def __post_init__(self):
        _positive("fitness.theta", self.theta)
        _positive("fitness.eps", self.eps)

    @property
    def p(self):
        return 1.0 + self.eps

    @property
    def log_C(self):
        p = self.p
        return math.log(p) + math.log(self.theta) / p - math.lgamma(1 / p)

    def logpdf(self, s):
        s = np.asarray(s, dtype=float)
        return self.log_C - self.theta * np.abs(s) ** self.p

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= 0, np.exp(self.logpdf(s)), 0.0)

    def cdf(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        return special.gammainc(1 / self.p, self.theta * s**self.p)

    def ppf(self, u):
        return (special.gammaincinv(1 / self.p, u) / self.theta) ** (1 / self.p)

    def mgf(self, x):
        if x == 0:
            return 1.0
        p, th = self.p, self.theta
        # the integrand exp(x s - th s^p) peaks at s* = (x / (th p))^(1/(p-1))
        s_star = (max(x, 0.0) / (th * p)) ** (1 / (p - 1))
        top = x * s_star - th * s_star**p
        hi = s_star + 1.0
        while x * hi - th * hi**p > top - 60:
            hi *= 2
        f = lambda s: np.exp(self.log_C + x * s - th * s**p - top)
        val = integrate(f, 0.0, hi, tol=1e-14, rtol=1e-13, breakpoints=[s_star]).value
        return val * math.exp(top)

    def dlogpdf(self, s):
        s = np.asarray(s, dtype=float)
        return -self.theta * self.p * s ** (self.p - 1)

    def d2logpdf(self, s):
        s = np.asarray(s, dtype=float)
        return -self.theta * self.p * (self.p - 1) * s ** (self.p - 2)

    @property
    def mean(self):
        p = self.p
        return math.exp(math.lgamma(2 / p) - math.lgamma(1 / p)) * self.theta ** (-1 / p)


@dataclass(frozen=True)
class Pareto(FitnessDistribution):
    alpha: float = 2.0
    xm: float = 1.0
    family = "pareto"

    def __post_init__(self):
        _positive("fitness.alpha", self.alpha)
        _positive("fitness.xm", self.xm)

    @property
    def lower(self):
        return self.xm

    @property
    def mgf_abscissa(self):
        return 0.0

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= self.xm, self.alpha * self.xm**self.alpha / np.maximum(s, self.xm) ** (self.alpha + 1), 0.0)

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s >= self.xm, 1 - (self.xm / np.maximum(s, self.xm)) ** self.alpha, 0.0)

    def ppf(self, u):
        return self.xm * (1 - np.asarray(u, dtype=float)) ** (-1 / self.alpha)

    def ppf_scalar(self, u):
        return self.xm * (1 - u) ** (-1 / self.alpha)

    def mgf(self, x):
        return 1.0 if x == 0 else math.inf

    def dlogpdf(self, s):
        return -(self.alpha + 1) / np.asarray(s, dtype=float)

    def d2logpdf(self, s):
        return (self.alpha + 1) / np.asarray(s, dtype=float) ** 2

    @property
    def mean(self):
        return self.alpha * self.xm / (self.alpha - 1) if self.alpha > 1 else math.inf


@dataclass(frozen=True)
class _InverseCdfTable:
    knots: np.ndarray
    cum: np.ndarray
    _ppf: object
    _cdf: object

    def ppf(self, u):
        return self._ppf(np.asarray(u, dtype=float)) if np.ndim(u) else float(self._ppf(u))

    def cdf(self, s):
        return self._cdf(np.asarray(s, dtype=float))


def _inverse_cdf_table(pdf, lo, hi, n=4096):
    """Monotone cubic (PCHIP) inverse-CDF table built from the cumulative
    integral of ``pdf`` on n knots."""
    x = np.linspace(lo, hi, n)
    pieces = [integrate(pdf, a, b, tol=1e-14).value for a, b in zip(x[:-1], x[1:])]
    cum = np.concatenate([[0.0], np.cumsum(pieces)])
    cum /= cum[-1]
    keep = np.concatenate([[True], np.diff(cum) > 0])
    xs, cs = x[keep], cum[keep]
    return _InverseCdfTable(
        xs, cs,
        interpolate.PchipInterpolator(cs, xs, extrapolate=False),
        interpolate.PchipInterpolator(np.concatenate([[lo - 1], xs, [hi + 1]]),
                                      np.concatenate([[0.0], cs, [1.0]])),
    )


class CustomFitness(FitnessDistribution):
    """Arbitrary density on [lower, upper], normalized by quadrature.

    ``upper`` may be infinite, in which case ``cutoff`` bounds the region used
    for the sampling table.
    """

    family = "custom"

    def __init__(self, density: Callable, lower: float = 0.0, upper: float = math.inf,
                 cutoff: float | None = None, decay_rate: float | None = None):
        self._density = density
        self.lower = float(lower)
        self.upper = float(upper)
        if math.isinf(self.upper):
            total = integrate(lambda s: density(s), self.lower, tol=1e-13, decay_rate=decay_rate).value
        else:
            total = integrate(lambda s: density(s), self.lower, self.upper, tol=1e-13).value
        if not total > 0:
            raise ValidationError("custom fitness density has zero mass")
        self._norm = 1.0 / total
        hi = self.upper if math.isfinite(self.upper) else (cutoff or self.lower + 100.0)
        self._table = _inverse_cdf_table(self.pdf, self.lower, hi)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s >= self.lower) & (s <= self.upper)
        safe = np.where(inside, s, self.lower if math.isfinite(self.lower) else 0.0)
        return np.where(inside, self._norm * np.asarray(self._density(safe), dtype=float), 0.0)

    def cdf(self, s):
        return self._table.cdf(s)

    def ppf(self, u):
        return self._table.ppf(u)

    @property
    def mgf_abscissa(self):
        if math.isfinite(self.upper):
            return math.inf
        return _probe_abscissa(self.logpdf)

    def mgf(self, x):
        if x == 0:
            return 1.0
        if math.isfinite(self.upper):
            return integrate(lambda s: self.pdf(s) * np.exp(x * s), self.lower, self.upper, tol=1e-13).value
        if x >= self.mgf_abscissa:
            return math.inf
        return integrate(lambda s: self.pdf(s) * np.exp(x * s), self.lower, tol=1e-13,
                         decay_rate=(self.mgf_abscissa - x) / 2 if math.isfinite(self.mgf_abscissa) else 1.0).value

    def dlogpdf(self, s):
        s = np.asarray(s, dtype=float)
        e = 1e-5 * np.maximum(np.abs(s), 1.0)
        return (self.logpdf(s + e) - self.logpdf(s - e)) / (2 * e)

    def d2logpdf(self, s):
        s = np.asarray(s, dtype=float)
        e = 1e-4 * np.maximum(np.abs(s), 1.0)
        return (self.logpdf(s + e) - 2 * self.logpdf(s) + self.logpdf(s - e)) / e**2


class TimeChangedFitness(FitnessDistribution):
    """Law of Z = G(T) with T ~ Exp(alpha) independent: the effective
    fitness of the stationary representation of an aging process.

    Expectations are best taken in the time variable, so ``time_change``
    exposes (aging, alpha) for callers that integrate over t directly.
    """

    family = "time_changed"

    def __init__(self, aging: AgingFunction, alpha: float):
        if not aging.integrable:
            raise ValidationError("time-changed fitness needs integrable aging")
        self.time_change = (aging, _positive("alpha", alpha))
        self.upper = aging.G_inf

    def pdf(self, z):
        ag, al = self.time_change
        z = np.asarray(z, dtype=float)
        inside = (z > 0) & (z < self.upper)
        t = ag.G_inv(np.where(inside, z, 0.0))
        return np.where(inside, al * np.exp(-al * t) / ag.g(t), 0.0)

    def cdf(self, z):
        ag, al = self.time_change
        z = np.clip(np.asarray(z, dtype=float), 0.0, self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(z < self.upper, ag.G_inv(np.minimum(z, self.upper * (1 - 1e-16))), np.inf)
        return -np.expm1(-al * t)

    def ppf(self, u):
        ag, al = self.time_change
        return ag.G(-np.log1p(-np.asarray(u, dtype=float)) / al)

    def mgf(self, x):
        ag, al = self.time_change
        f = lambda t: al * np.exp(-al * t + x * ag.G(t))
        return integrate(f, 0.0, tol=1e-13, decay_rate=al, decay_scale=al * math.exp(x * self.upper)).value


def _probe_abscissa(logpdf, grid=(10.0, 20.0, 40.0, 80.0, 160.0)):
    """Estimate sup{x : mu(s) e^{xs} -> 0} from the slope of log mu at large s.

    Returns inf when the slope keeps steepening (sub-exponential tail) and 0
    when log mu decays slower than any linear function (heavy tail).
    """
    s = np.asarray(grid)
    with np.errstate(divide="ignore"):
        lp = np.asarray(logpdf(s), dtype=float)
    ok = np.isfinite(lp)
    if ok.sum() < 3:
        return math.inf
    s, lp = s[ok], lp[ok]
    slopes = -np.diff(lp) / np.diff(s)
    if slopes[-1] < 1e-3:
        return 0.0
    if slopes[-1] > 1.5 * slopes[-2]:
        return math.inf
    return float(slopes[-1])


def make_fitness(family: str, **params) -> FitnessDistribution:
    family = family.lower()
    if family in ("degenerate", "none"):
        return Degenerate(params.get("value", 1.0))
    if family == "uniform":
        return BoundedUniform(params.get("gamma", 1.0))
    if family == "exponential":
        return ExponentialFitness(params["theta"])
    if family in ("gamma", "general_exponential"):
        return GeneralExponential(params["theta"], params.get("shape", 1.0))
    if family == "subexponential":
        return SubExponential(params.get("theta", 1.0), params["eps"])
    if family == "pareto":
        return Pareto(params.get("alpha", 2.0), params.get("xm", 1.0))
    raise ValidationError(f"unknown fitness family {family!r}")


def fitness_mgf(fd: FitnessDistribution, x: float) -> float:
    if not x >= 0:
        raise ValueError("fitness_mgf needs x >= 0")
    if x == 0:
        return 1.0
    return fd.mgf(x)


def classify_fitness_tail(fd: FitnessDistribution) -> TailClass:
    if math.isfinite(fd.upper):
        return TailClass("Bounded")
    if isinstance(fd, Pareto):
        return TailClass("HeavyTailed")
    if isinstance(fd, GeneralExponential):
        return TailClass("GeneralExponential", fd.theta)
    if isinstance(fd, SubExponential):
        return TailClass("SubExponential")
    x = fd.mgf_abscissa
    if x == 0:
        return TailClass("HeavyTailed")
    if math.isinf(x):
        return TailClass("SubExponential")
    return TailClass("GeneralExponential", x)


def fitness_sample(fd: FitnessDistribution, rng: np.random.Generator, size=None):
    return fd.sample(rng, size)


# ---------------------------------------------------------------- spec


@dataclass(frozen=True)
class ProcessSpec:
    weights: WeightSequence
    aging: AgingFunction = field(default_factory=ConstantAging)
    fitness: FitnessDistribution = field(default_factory=Degenerate)

    @property
    def stationary(self):
        return isinstance(self.aging, ConstantAging)

    @property
    def has_fitness(self):
        return not self.fitness.degenerate or self.fitness.value != 1.0
