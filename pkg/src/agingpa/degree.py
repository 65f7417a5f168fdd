"""Limiting degree distributions.

Every p_k is assembled in log space.  Quadrature paths integrate
exp(log-integrand - offset_k) with a per-k offset taken from a grid maximum,
so probabilities far below the double-precision floor keep full relative
accuracy.  When the whole range 0..kmax is requested an extra component
carries the tail mass sum_{k>kmax} p_k through the same quadrature.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .malthus import forward_occupancy
from .model import (
    ConstantAging, GeneralExponential, ProcessSpec, WeightSequence, classify_fitness_tail,
)
from .numerics import integrate_vec, log_gamma_diff

__all__ = [
    "DegreeDistribution", "LhatCoefficients", "lhat_coefficients", "UnboundedFitnessError", "LhatUnderflowError", "UnsupportedSpecError",
    "log_gamma_ratio", "occupancy", "stationary_pk", "stationary_fitness_pk", "lhat", "lhat_values",
    "aging_pk", "aging_fitness_pk", "expfit_cohort_pk", "expfit_pk", "lifetime_pk",
    "dynamical_exponent", "read_csv",
]

_MARGIN = 45.0  # log-units below each component's peak where truncation is safe


class UnboundedFitnessError(ValueError):
    pass


class LhatUnderflowError(ArithmeticError):
    pass


class UnsupportedSpecError(ValueError):
    pass


@dataclass(frozen=True)
class DegreeDistribution:
    ks: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray
    tail_mass: float
    method: str
    tolerances: dict = field(default_factory=dict)
    tail_bound: float | None = None

    @property
    def kmax(self):
        return int(self.ks[-1])

    @property
    def full_range(self):
        return self.ks.size == self.kmax + 1 and self.ks[0] == 0

    @property
    def normalization_error(self):
        return abs(math.fsum(self.probs) + self.tail_mass - 1.0)

    def pk(self, k):
        idx = np.searchsorted(self.ks, k)
        return float(self.probs[idx])

    def to_csv(self, path):
        cum = np.cumsum(self.probs)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["k", "p_k", "cum", "method"])
            for k, p, c in zip(self.ks, self.probs, cum):
                out.writerow([int(k), f"{p:.17g}", f"{c:.17g}", self.method])


@dataclass(frozen=True)
class LhatCoefficients:
    ks: np.ndarray
    values: np.ndarray


def read_csv(path):
    """Read back the (k, p_k) columns written by ``DegreeDistribution.to_csv``."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["k"]) for r in rows]), np.array([float(r["p_k"]) for r in rows])


def _make(ks, logp, tail_mass, method, tol, tail_bound=None):
    logp = np.asarray(logp, dtype=float)
    probs = np.exp(logp)
    return DegreeDistribution(np.asarray(ks), probs, logp, float(tail_mass), method, dict(tol), tail_bound)


def _ks(kmax, ks):
    if ks is None:
        if kmax is None or kmax < 0:
            raise ValueError("kmax must be >= 0")
        return np.arange(kmax + 1), True
    ks = np.unique(np.asarray(ks, dtype=int))
    if ks.size == 0 or ks[0] < 0:
        raise ValueError("ks must be non-negative")
    return ks, bool(ks[0] == 0 and ks.size == ks[-1] + 1)


def log_gamma_ratio(k, beta):
    """log of Gamma(k + beta) / (Gamma(beta) Gamma(k + 1))."""
    k = np.asarray(k, dtype=float)
    return log_gamma_diff(k + 1, beta - 1) - special.gammaln(beta)


def _log1m_exp(x):
    """log(1 - e^{-x}) for x >= 0."""
    with np.errstate(divide="ignore"):
        return np.log(-np.expm1(-np.asarray(x, dtype=float)))


def _affine(spec_or_w):
    w = spec_or_w.weights if isinstance(spec_or_w, ProcessSpec) else spec_or_w
    ab = w.affine_params()
    if ab is None:
        raise UnsupportedSpecError("this path requires affine weights f_k = a k + b")
    return ab


def _log_tail_nbinom(K, beta, x):
    """log P(V_s > K) for the affine stationary process, x = a s."""
    p = -np.expm1(-np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        return np.log(special.betainc(K + 1, beta, p))


def _log_quadrature(logf, a, b, off, rtol, breakpoints=()):
    """int_a^b exp(logf(x)) componentwise, returned in log space."""
    f = lambda x: np.exp(logf(x) - off)
    vals, errs = integrate_vec(f, a, b, rtol=rtol, atol=1e-280, breakpoints=breakpoints)
    with np.errstate(divide="ignore"):
        return off + np.log(vals), errs / np.maximum(vals, 1e-300)


def _grid_offsets(logf, lo, hi, n=241):
    x = np.unique(np.concatenate([np.linspace(lo, hi, n), lo + np.geomspace(1e-6, 1.0, 60) * (hi - lo)]))
    lg = logf(x)
    off = np.max(lg, axis=0)
    return np.where(np.isfinite(off), off, 0.0)


def _time_horizon(logf, alpha, bound, T0):
    """Choose T so that int_T^inf of every component is negligible, given
    log-integrand <= log(alpha) - alpha t + bound_k for all t."""
    T = T0
    for _ in range(12):
        off = _grid_offsets(logf, 0.0, T)
        need = float(np.max((math.log(alpha) + bound - off + _MARGIN) / alpha))
        if need <= T:
            return T, off
        T = 1.25 * need
    return T, _grid_offsets(logf, 0.0, T)


# ------------------------------------------------------------------ occupancy


def occupancy(spec: ProcessSpec, t: float, kmax: int) -> DegreeDistribution:
    """P(M_t = k) = E[P(V_{Y G(t)} = k)] for k = 0..kmax."""
    if kmax < 0:
        raise ValueError("kmax must be >= 0")
    if not t >= 0:
        raise ValueError("t must be >= 0")
    s = spec.aging.G_inf if math.isinf(t) else float(spec.aging.G(t))
    return _occupancy_at(spec, s, kmax)


def _occupancy_at(spec, s, kmax):
    ks = np.arange(kmax + 1)
    fd, w = spec.fitness, spec.weights
    ab = w.affine_params()
    tol = {"rtol": 1e-12}
    if ab is None:
        if fd.degenerate:
            P, tail = forward_occupancy(w, [s * fd.value], kmax)
            with np.errstate(divide="ignore"):
                return _make(ks, np.log(P[0]), tail[0], "OdeRecursion", tol)
        x, wts = np.polynomial.legendre.leggauss(64)
        y = fd.ppf(0.5 * (x + 1))
        P, tail = forward_occupancy(w, y * s, kmax)
        with np.errstate(divide="ignore"):
            return _make(ks, np.log(0.5 * wts @ P), 0.5 * wts @ tail, "OdeRecursion", tol)
    a, b = ab
    beta = b / a
    lgr = log_gamma_ratio(ks, beta)
    if fd.degenerate:
        x = a * s * fd.value
        if x == 0:
            logp = np.where(ks == 0, 0.0, -np.inf)
            return _make(ks, logp, 0.0, "ClosedForm", tol)
        logp = lgr - beta * x + ks * _log1m_exp(x)
        tail = special.betainc(kmax + 1, beta, -math.expm1(-x))
        return _make(ks, logp, tail, "ClosedForm", tol)
    if s == 0:
        return _make(ks, np.where(ks == 0, 0.0, -np.inf), 0.0, "ClosedForm", tol)

    def logf(y):
        y = np.asarray(y)[:, None]
        x = a * s * y
        body = lgr[None, :] - beta * x + special.xlogy(ks[None, :], -np.expm1(-x))
        tail = _log_tail_nbinom(kmax, beta, x)
        with np.errstate(divide="ignore"):
            return fd.logpdf(y) + np.concatenate([body, tail], axis=1)

    lo, hi = _fitness_range(fd)
    off = _grid_offsets(logf, lo, hi)
    logv, _ = _log_quadrature(logf, lo, hi, off, 1e-11)
    return _make(ks, logv[:-1], math.exp(logv[-1]), "Quadrature1D", {"rtol": 1e-11})


def _fitness_range(fd, extra_bound=None):
    """Integration range for the fitness variable: the support, cut where
    the log density has dropped 45 units below its maximum."""
    lo = fd.lower
    if math.isfinite(fd.upper):
        return lo, fd.upper
    hi = max(1.0, 4 * fd.mean if math.isfinite(fd.mean) else 1.0)
    grid = np.linspace(lo, hi, 400)[1:]
    peak = np.max(fd.logpdf(grid))
    while fd.logpdf(np.array([hi]))[0] > peak - _MARGIN - 5:
        hi *= 1.5
    return lo, hi


# ------------------------------------------------------------------ stationary


def stationary_pk(w: WeightSequence, alpha_star: float, kmax: int) -> DegreeDistribution:
    """p_k = alpha/(alpha + f_k) prod_{i<k} f_i/(alpha + f_i); the tail
    mass prod_{i<=kmax} f_i/(alpha + f_i) is exact."""
    if kmax < 0:
        raise ValueError("kmax must be >= 0")
    ks = np.arange(kmax + 1)
    f = w(ks)
    logr = -np.log1p(alpha_star / f)
    cum = np.concatenate([[0.0], np.cumsum(logr)])
    logp = np.log(alpha_star / (alpha_star + f)) + cum[:-1]
    return _make(ks, logp, math.exp(cum[-1]), "ClosedForm", {"exact": True})


def _stationary_log_table(w, alpha, y, kmax):
    """log p_k for weights y f, all k <= kmax at once, plus the tail column."""
    ks = np.arange(kmax + 1)
    f = w(ks)[None, :]
    y = np.asarray(y, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        logr = -np.log1p(alpha / (y * f))
        cum = np.cumsum(logr, axis=1)
        head = np.concatenate([np.zeros((y.shape[0], 1)), cum[:, :-1]], axis=1)
        logp = -np.log1p(y * f / alpha) + head
    return np.concatenate([logp, cum[:, -1:]], axis=1)


def stationary_fitness_pk(w: WeightSequence, fd, alpha_star: float, kmax: int,
                          rtol: float = 1e-11) -> DegreeDistribution:
    """p_k = E_Y[alpha/(alpha + Y f_k) prod_{i<k} Y f_i/(alpha + Y f_i)] for a
    bounded fitness Y."""
    if fd.degenerate:
        d = stationary_pk(w.scaled(fd.value), alpha_star, kmax)
        return d
    if not math.isfinite(fd.upper):
        raise UnboundedFitnessError(
            "stationary fitness needs a bounded fitness distribution: with unbounded fitness "
            "the stationary process has no Malthusian parameter")
    ks = np.arange(kmax + 1)
    tc = getattr(fd, "time_change", None)
    if tc is not None:
        ag, al = tc

        def logf(t):
            t = np.asarray(t, dtype=float)
            return math.log(al) - al * t[:, None] + _stationary_log_table(w, alpha_star, ag.G(t), kmax)

        T, off = _time_horizon(logf, al, np.zeros(kmax + 2), 40.0 / al)
        logv, _ = _log_quadrature(logf, 0.0, T, off, rtol)
    else:
        def logf(y):
            with np.errstate(divide="ignore"):
                return fd.logpdf(y)[:, None] + _stationary_log_table(w, alpha_star, y, kmax)

        off = _grid_offsets(logf, fd.lower, fd.upper)
        logv, _ = _log_quadrature(logf, fd.lower, fd.upper, off, rtol)
    return _make(ks, logv[:-1], math.exp(logv[-1]), "Quadrature1D", {"rtol": rtol})


# ------------------------------------------------------------------ aging, no fitness


def _log_Pk_factory(spec, kmax_needed):
    """Return (logP(s, ks) -> (n, m), log upper bound per k) for the
    stationary occupancy at transformed time s."""
    w = spec.weights
    ab = w.affine_params()
    if ab is not None:
        a, b = ab
        beta = b / a

        def logP(s, ks):
            s = np.asarray(s, dtype=float)[:, None]
            return log_gamma_ratio(ks, beta)[None, :] - b * s + special.xlogy(ks[None, :], -np.expm1(-a * s))

        def bound(ks):
            return log_gamma_ratio(ks, beta) + ks * _log1m_exp(a * spec.aging.G_inf)

        return logP, bound
    if kmax_needed > 200:
        raise LhatUnderflowError(
            "the L-hat product path for non-affine weights is limited to k <= 200; "
            "use the asymptotics module beyond")

    def logP(s, ks):
        P, _ = forward_occupancy(w, s, int(ks.max()))
        with np.errstate(divide="ignore"):
            return np.log(np.clip(P[:, ks], 0.0, None))

    return logP, lambda ks: np.zeros(ks.size)


def lhat_values(spec: ProcessSpec, alpha_star: float, kmax: int, rtol: float = 1e-11):
    """L-hat(k) = L(P_k(G) g)(alpha) / L(P_k(G))(alpha) for k = 0..kmax,
    together with log L(P_k(G)) (the Laplace transform without the alpha
    factor)."""
    ag = spec.aging
    if isinstance(ag, ConstantAging):
        return np.ones(kmax + 1), None
    if not ag.integrable:
        raise UnsupportedSpecError("L-hat coefficients need integrable aging")
    ks = np.arange(kmax + 1)
    logP, bound = _log_Pk_factory(spec, kmax)
    tgrid = np.linspace(0, 50.0, 2001)
    log_gmax = float(np.log(np.max(ag.g(tgrid))))

    def logf(t):
        t = np.asarray(t, dtype=float)
        lp = logP(ag.G(t), ks) - alpha_star * t[:, None]
        with np.errstate(divide="ignore"):
            lg = np.log(ag.g(t))[:, None]
        return np.concatenate([lp + lg, lp], axis=1)

    B = bound(ks)
    T, off = _time_horizon(logf, alpha_star, np.concatenate([B + log_gmax, B]) - math.log(alpha_star),
                           40.0 / alpha_star)
    logv, _ = _log_quadrature(logf, 0.0, T, off, rtol)
    lnum, lden = logv[: kmax + 1], logv[kmax + 1:]
    if np.any(~np.isfinite(lden)):
        raise LhatUnderflowError("Laplace transform of P_k underflowed; use the asymptotics module")
    return np.exp(lnum - lden), lden


def lhat_coefficients(spec: ProcessSpec, alpha_star: float, kmax: int) -> LhatCoefficients:
    vals, _ = lhat_values(spec, alpha_star, kmax)
    return LhatCoefficients(np.arange(kmax + 1), vals)


def lhat(spec: ProcessSpec, k: int, alpha_star: float) -> float:
    vals, _ = lhat_values(spec, alpha_star, k)
    return float(vals[k])


def aging_pk(spec: ProcessSpec, alpha_star: float, kmax: int | None = None, ks=None,
             method: str = "auto", rtol: float = 1e-11) -> DegreeDistribution:
    """Limiting degree distribution with integrable aging and no fitness.

    ``method="direct"`` integrates the affine closed form against the
    Exp(alpha*) age; ``method="product"`` uses the L-hat product formula,
    which also serves non-affine weights (k <= 200).
    """
    ag, w = spec.aging, spec.weights
    if isinstance(ag, ConstantAging):
        return stationary_pk(w, alpha_star, kmax if ks is None else int(np.max(ks)))
    if not ag.integrable:
        raise UnsupportedSpecError("aging_pk needs integrable aging")
    if method == "auto":
        method = "direct" if w.affine_params() is not None else "product"
    ks, full = _ks(kmax, ks)
    if method == "product":
        if not full:
            raise ValueError("the product path computes the full range 0..kmax")
        kmax = int(ks[-1])
        L, _ = lhat_values(spec, alpha_star, kmax, rtol)
        f = w(ks) * L
        logr = -np.log1p(alpha_star / f)
        cum = np.concatenate([[0.0], np.cumsum(logr)])
        logp = -np.log1p(f / alpha_star) + cum[:-1]
        return _make(ks, logp, math.exp(cum[-1]), "OdeRecursion" if w.affine_params() is None else "LhatProduct",
                     {"rtol": rtol})
    a, b = _affine(spec)
    beta = b / a
    lgr = log_gamma_ratio(ks, beta)
    kk = ks.astype(float)
    K = int(ks[-1])
    log_al = math.log(alpha_star)

    def logf(t):
        t = np.asarray(t, dtype=float)[:, None]
        x = a * ag.G(t)
        base = log_al - alpha_star * t
        body = base - beta * x + lgr[None, :] + special.xlogy(kk[None, :], -np.expm1(-x))
        if not full:
            return body
        return np.concatenate([body, base + _log_tail_nbinom(K, beta, x)], axis=1)

    x_inf = a * ag.G_inf
    bound = lgr + kk * _log1m_exp(x_inf)
    if full:
        tb = float(special.betainc(K + 1, beta, -math.expm1(-x_inf)))
        bound = np.concatenate([bound, [math.log(max(tb, 1e-300))]])
    T, off = _time_horizon(logf, alpha_star, bound, 40.0 / alpha_star)
    logv, _ = _log_quadrature(logf, 0.0, T, off, rtol)
    if full:
        tail_bound = float(special.betainc(K + 1, beta, -math.expm1(-x_inf)))
        return _make(ks, logv[:-1], math.exp(logv[-1]), "Quadrature1D", {"rtol": rtol}, tail_bound)
    return _make(ks, logv, math.nan, "Quadrature1D", {"rtol": rtol})


def aging_bound(spec: ProcessSpec, ks):
    """Gamma(k+b/a)/(Gamma(b/a) k!) (1 - exp(-a ymax G_inf))^k."""
    a, b = _affine(spec)
    ymax = spec.fitness.upper
    ks = np.asarray(ks)
    return np.exp(log_gamma_ratio(ks, b / a) + ks * _log1m_exp(a * ymax * spec.aging.G_inf))


# ------------------------------------------------------------------ aging and fitness


def aging_fitness_pk(spec: ProcessSpec, alpha_star: float, kmax: int | None = None, ks=None,
                     rtol: float = 1e-10) -> DegreeDistribution:
    """p_k = Gamma-ratio int int alpha e^{-alpha t} mu(s) e^{-b s G(t)}
    (1 - e^{-a s G(t)})^k ds dt, outer integral over t, inner over s."""
    fd, ag = spec.fitness, spec.aging
    if fd.degenerate:
        return aging_pk(ProcessSpec(spec.weights.scaled(fd.value), ag), alpha_star, kmax, ks, rtol=rtol)
    tailc = classify_fitness_tail(fd)
    if tailc.tag == "HeavyTailed":
        raise UnsupportedSpecError("heavy-tailed fitness makes the process explosive")
    if not ag.integrable:
        raise UnsupportedSpecError("aging_fitness_pk needs integrable aging")
    a, b = _affine(spec)
    beta = b / a
    ks, full = _ks(kmax, ks)
    K = int(ks[-1])
    lgr = log_gamma_ratio(ks, beta)
    kk = ks.astype(float)
    log_al = math.log(alpha_star)
    m = ks.size + (1 if full else 0)

    def log_integrand(t, s):
        """(n_s, n_t, m) log integrand on the tensor grid s x t."""
        G = ag.G(np.asarray(t, dtype=float))
        x = a * np.asarray(s)[:, None] * G[None, :]
        with np.errstate(divide="ignore"):
            lmu = fd.logpdf(np.asarray(s))[:, None]
        base = (lmu + log_al - alpha_star * np.asarray(t)[None, :])[:, :, None]
        body = base - beta * x[:, :, None] + lgr[None, None, :] + special.xlogy(kk[None, None, :], -np.expm1(-x)[:, :, None])
        if not full:
            return body
        return np.concatenate([body, base + _log_tail_nbinom(K, beta, x)[:, :, None]], axis=2)

    s_lo, s_hi = _fitness_range(fd)
    T = 40.0 / alpha_star
    for _ in range(12):
        tg = np.unique(np.concatenate([np.linspace(0, T, 121)[1:], np.geomspace(1e-5, T, 40)]))
        sg = np.unique(np.concatenate([np.linspace(s_lo, s_hi, 121)[1:], s_lo + np.geomspace(1e-5, 1.0, 30) * (s_hi - s_lo)]))
        lg = np.concatenate([log_integrand(tg[i:i + 20], sg) for i in range(0, tg.size, 20)], axis=1)
        off = np.max(lg, axis=(0, 1))
        off = np.where(np.isfinite(off), off, 0.0)
        # log integrand <= log alpha - alpha t + max_s [log mu(s) + k log(1 - e^{-a s G_inf})] + lgr
        with np.errstate(divide="ignore"):
            lmu = fd.logpdf(sg)
        env = lmu[:, None] + kk[None, :] * _log1m_exp(a * sg * ag.G_inf)[:, None] + lgr[None, :]
        B = np.max(env, axis=0) + math.log(s_hi - s_lo)
        if full:
            B = np.concatenate([B, [np.max(lmu) + math.log(s_hi - s_lo)]])
        need_T = float(np.max((log_al + B - off + _MARGIN) / alpha_star))
        grow = False
        if need_T > T:
            T, grow = 1.25 * need_T, True
        if math.isinf(fd.upper):
            # the s tail beyond s_hi must sit below every component's offset
            target = np.min(off[: ks.size] - lgr) - log_al - _MARGIN
            if fd.logpdf(np.array([s_hi]))[0] > target:
                s_hi, grow = s_hi * 1.3, True
        if not grow:
            break

    inner_rtol = rtol / 10

    def outer(t):
        t = np.asarray(t, dtype=float)
        out = np.empty((t.size, m))
        step = max(1, 60000 // m)
        for i in range(0, t.size, step):
            tt = t[i:i + step]

            def inner(s, tt=tt):
                v = log_integrand(tt, s) - off[None, None, :]
                return np.exp(v).reshape(np.size(s), -1)

            vals, _ = integrate_vec(inner, s_lo, s_hi, rtol=inner_rtol, atol=1e-280)
            out[i:i + step] = vals.reshape(tt.size, m)
        return out

    vals, _ = integrate_vec(outer, 0.0, T, rtol=rtol, atol=1e-280)
    with np.errstate(divide="ignore"):
        logv = off + np.log(vals)
    tol = {"rtol": rtol, "inner_rtol": inner_rtol, "s_range": (s_lo, s_hi), "t_max": T}
    if full:
        tb = None
        if math.isfinite(fd.upper):
            tb = float(special.betainc(K + 1, beta, -math.expm1(-a * fd.upper * ag.G_inf)))
        return _make(ks, logv[:-1], math.exp(logv[-1]), "Quadrature2D", tol, tb)
    return _make(ks, logv, math.nan, "Quadrature2D", tol)


# ------------------------------------------------------------------ exponential fitness


def _expfit_params(spec):
    fd = spec.fitness
    if not (isinstance(fd, GeneralExponential) and fd.shape == 1.0 and fd.h is None):
        raise UnsupportedSpecError("this closed form needs exponential fitness")
    a, b = _affine(spec)
    return a, b, fd.theta


def _expfit_log_cohort(ks, a, b, theta, G):
    """log P(V_{Y G} = k) for Y ~ Exp(theta), broadcasting over G (column)
    and k (row)."""
    beta = b / a
    c = theta / (a * np.asarray(G, dtype=float))
    bp = beta + c
    ks = np.asarray(ks, dtype=float)
    # both forms cancel terms of size c log c or k log k; use the smaller
    by_c = special.gammaln(bp) - special.gammaln(beta) - log_gamma_diff(ks + beta, c + 1)
    by_k = log_gamma_diff(beta, ks) - log_gamma_diff(bp, ks + 1)
    return np.log(c) + np.where(c > ks, by_k, by_c)


def _expfit_log_tail(K, a, b, theta, G):
    beta = b / a
    c = theta / (a * np.asarray(G, dtype=float))
    bp = beta + c
    by_c = special.gammaln(bp) - special.gammaln(beta) - log_gamma_diff(K + 1 + beta, c)
    by_k = log_gamma_diff(beta, K + 1) - log_gamma_diff(bp, K + 1)
    return np.where(c > K, by_k, by_c)


def expfit_cohort_pk(spec: ProcessSpec, t: float, kmax: int) -> DegreeDistribution:
    """Degree law at age t for exponential fitness: theta/(theta + f_k G)
    prod_{i<k} f_i G/(theta + f_i G), in log-gamma form."""
    a, b, theta = _expfit_params(spec)
    G = spec.aging.G_inf if math.isinf(t) else float(spec.aging.G(t))
    return _cohort_at(a, b, theta, G, kmax)


def _cohort_at(a, b, theta, G, kmax):
    ks = np.arange(kmax + 1)
    if G == 0:
        return _make(ks, np.where(ks == 0, 0.0, -np.inf), 0.0, "ClosedForm", {"exact": True})
    if math.isinf(G):
        raise UnsupportedSpecError("non-integrable aging: the lifetime count diverges")
    logp = _expfit_log_cohort(ks, a, b, theta, G)
    return _make(ks, logp, math.exp(_expfit_log_tail(kmax, a, b, theta, G)), "ClosedForm", {"exact": True})


def expfit_pk(spec: ProcessSpec, alpha_star: float, kmax: int | None = None, ks=None,
              rtol: float = 1e-11) -> DegreeDistribution:
    """p_k = int alpha e^{-alpha t} P_k(t) dt with the closed-form cohort law
    P_k(t) of exponential fitness (one-dimensional quadrature)."""
    a, b, theta = _expfit_params(spec)
    ag = spec.aging
    if not ag.integrable:
        raise UnsupportedSpecError("expfit_pk needs integrable aging")
    ks, full = _ks(kmax, ks)
    K = int(ks[-1])
    log_al = math.log(alpha_star)

    def logf(t):
        t = np.asarray(t, dtype=float)
        G = np.maximum(ag.G(t), 1e-300)[:, None]
        base = log_al - alpha_star * t[:, None]
        body = base + _expfit_log_cohort(ks[None, :], a, b, theta, G)
        if not full:
            return body
        return np.concatenate([body, base + _expfit_log_tail(K, a, b, theta, G)], axis=1)

    # P_k <= 1 is the only uniform bound on the cohort law
    T, off = _time_horizon(logf, alpha_star, np.zeros(ks.size + (1 if full else 0)), 40.0 / alpha_star)
    logv, _ = _log_quadrature(logf, 0.0, T, off, rtol)
    if full:
        return _make(ks, logv[:-1], math.exp(logv[-1]), "Quadrature1D", {"rtol": rtol})
    return _make(ks, logv, math.nan, "Quadrature1D", {"rtol": rtol})


def lifetime_pk(spec: ProcessSpec, kmax: int) -> DegreeDistribution:
    """q_k = P(V_{Y G_inf} = k), the law of the total number of children."""
    if not spec.aging.integrable:
        raise UnsupportedSpecError("non-integrable aging: the lifetime number of children diverges")
    fd = spec.fitness
    if isinstance(fd, GeneralExponential) and fd.shape == 1.0 and fd.h is None and spec.weights.affine_params():
        a, b, theta = _expfit_params(spec)
        return _cohort_at(a, b, theta, spec.aging.G_inf, kmax)
    return _occupancy_at(spec, spec.aging.G_inf, kmax)


def dynamical_exponent(spec: ProcessSpec, t: float) -> float:
    """tau(t) = 1 + theta/(a G(t)) for general-exponential fitness."""
    tail = classify_fitness_tail(spec.fitness)
    if tail.tag != "GeneralExponential":
        raise UnsupportedSpecError(f"dynamical power law needs general-exponential fitness, got {tail.tag}")
    a, _ = _affine(spec)
    if not t > 0:
        raise ValueError("t must be > 0")
    G = spec.aging.G_inf if math.isinf(t) else float(spec.aging.G(t))
    return 1.0 + tail.theta / (a * G)
