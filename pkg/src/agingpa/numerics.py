"""Numerical kernels: log-gamma, adaptive Gauss-Kronrod quadrature, bracketed
root finding and bivariate normal orthant probabilities.

Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

__all__ = [
    "QuadratureResult",
    "Bracket",
    "IntegrationError",
    "BracketError",
    "log_gamma",
    "log_gamma_diff",
    "integrate",
    "integrate_vec",
    "find_root",
    "orthant_probability",
]


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise BracketError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")


class IntegrationError(RuntimeError):
    """Raised when adaptive quadrature exhausts its interval budget.

    The best estimate so far is kept on ``result``.
    """

    def __init__(self, message: str, result):
        super().__init__(message)
        self.result = result


class BracketError(ValueError):
    pass


def log_gamma(x):
    """ln Gamma(x) for x > 0 (scalar or array)."""
    if np.ndim(x) == 0:
        x = float(x)
        if not x > 0:
            raise ValueError(f"log_gamma domain error: x={x} must be > 0")
        return math.lgamma(x)
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("log_gamma domain error: all x must be > 0")
    return special.gammaln(x)


def _stirling_tail(z):
    with np.errstate(over="ignore"):
        z2 = z * z
    return (1 / 12 - (1 / 360 - (1 / 1260 - 1 / (1680 * z2)) / z2) / z2) / z


def log_gamma_diff(x, d):
    """ln Gamma(x + d) - ln Gamma(x) without the cancellation of two large
    log-gammas: for x >= 50 the Stirling series is differenced term by term."""
    x, d = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(d, dtype=float))
    w = x + d
    big = x >= 50
    out = np.empty(x.shape)
    xs, ds, ws = x[~big], d[~big], w[~big]
    out[~big] = special.gammaln(ws) - special.gammaln(xs)
    xb, db, wb = x[big], d[big], w[big]
    out[big] = ((wb - 0.5) * np.log1p(db / xb) + db * np.log(xb) - db
                + _stirling_tail(wb) - _stirling_tail(xb))
    return out if out.ndim else float(out)


# 15-point Kronrod rule with embedded 7-point Gauss rule on [-1, 1].
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
W_KRONROD = np.concatenate([_WK[:-1], _WK[::-1]])
# Gauss nodes are the odd-indexed Kronrod nodes (1, 3, 5, 7 from each end).
W_GAUSS = np.zeros(15)
W_GAUSS[[1, 3, 5]] = _WG[:3]
W_GAUSS[[9, 11, 13]] = _WG[2::-1]
W_GAUSS[7] = _WG[3]


def _vectorized(f):
    def g(x):
        try:
            y = np.asarray(f(x), dtype=float)
        except TypeError:
            # callable only accepts scalars
            y = None
        if y is None or y.shape != x.shape:
            y = np.array([float(f(xi)) for xi in x])
        return y

    return g


def _gk15(f, a, b):
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    y = f(c + h * NODES)
    k = h * float(W_KRONROD @ y)
    g = h * float(W_GAUSS @ y)
    if not np.all(np.isfinite(y)):
        return k, math.inf
    return k, abs(k - g)


def _adaptive(f, a, b, tol, rtol, max_intervals):
    k, e = _gk15(f, a, b)
    heap = [(-e, a, b, k)]
    total, err, evals = k, e, 15
    while err > max(tol, rtol * abs(total)):
        if len(heap) >= max_intervals:
            res = QuadratureResult(total, err, evals)
            raise IntegrationError(
                f"quadrature did not converge on [{a}, {b}]: estimate {total!r}, error {err:.3g}", res
            )
        ne, lo, hi, kv = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        k1, e1 = _gk15(f, lo, mid)
        k2, e2 = _gk15(f, mid, hi)
        evals += 30
        heapq.heappush(heap, (-e1, lo, mid, k1))
        heapq.heappush(heap, (-e2, mid, hi, k2))
        # re-sum rather than update incrementally to avoid drift
        total = math.fsum(item[3] for item in heap)
        err = math.fsum(-item[0] for item in heap)
    return QuadratureResult(total, err, evals)


def integrate(
    f: Callable,
    a: float,
    b: float = math.inf,
    tol: float = 1e-10,
    *,
    rtol: float = 0.0,
    decay_rate: float | None = None,
    decay_scale: float = 1.0,
    breakpoints: Sequence[float] = (),
    max_intervals: int = 4000,
) -> QuadratureResult:
    """Adaptive Gauss-Kronrod (7/15) integration of ``f`` over [a, b].

    ``f`` should accept a 1-D array of abscissae; scalar-only callables are
    evaluated point by point.  For ``b = inf`` with ``decay_rate`` given, the
    integrand is assumed bounded by ``decay_scale * exp(-decay_rate * (x - a))``
    and the domain is cut where that bound drops below tol/100.  Without a
    decay hint the half line is mapped onto [0, 1).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    f = _vectorized(f)
    if b == a:
        return QuadratureResult(0.0, 0.0, 1)
    if math.isinf(b):
        if decay_rate is not None:
            if not decay_rate > 0:
                raise ValueError("decay_rate must be positive")
            b = a + math.log(max(decay_scale, 1.0) * 100.0 / tol) / decay_rate
        else:

            def mapped(u, _f=f, _a=a):
                one_minus = 1.0 - u
                return _f(_a + u / one_minus) / (one_minus * one_minus)

            return _integrate_pieces(mapped, [0.0, 1.0], tol, rtol, max_intervals)
    pts = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    return _integrate_pieces(f, pts, tol, rtol, max_intervals)


def _integrate_pieces(f, pts, tol, rtol, max_intervals):
    n = len(pts) - 1
    parts = [_adaptive(f, lo, hi, tol / n, rtol, max_intervals) for lo, hi in zip(pts[:-1], pts[1:])]
    return QuadratureResult(
        math.fsum(p.value for p in parts),
        math.fsum(p.abs_error_estimate for p in parts),
        sum(p.evaluations for p in parts),
    )


def integrate_vec(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    *,
    rtol: float = 1e-10,
    atol: float = 1e-300,
    initial: int = 8,
    max_rounds: int = 40,
    max_intervals: int = 20000,
    breakpoints: Sequence[float] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Vector-valued adaptive Gauss-Kronrod quadrature on a finite interval.

    ``f(x)`` maps an array of n abscissae to an (n, m) array.  Every component
    gets its own error control: an interval is bisected while any component's
    local error exceeds its share (proportional to length) of
    ``max(atol, rtol * |I_i|)``.  Returns (values, error_estimates).
    """
    edges = np.unique(np.concatenate([np.linspace(a, b, initial + 1), [p for p in breakpoints if a < p < b]]))
    lo, hi = edges[:-1], edges[1:]
    kvals, errs = _gk15_batch(f, lo, hi)
    length = b - a
    for _ in range(max_rounds):
        total = kvals.sum(axis=0)
        tol_i = np.maximum(atol, rtol * np.abs(total))
        err_tot = errs.sum(axis=0)
        if np.all(err_tot <= tol_i):
            return total, err_tot
        share = ((hi - lo) / length)[:, None] * tol_i[None, :]
        bad = np.any(errs > share, axis=1)
        if not np.any(bad):
            # local shares met but the sum is not: split the worst offenders
            ratio = np.max(errs / np.maximum(tol_i[None, :], 1e-300), axis=1)
            bad = ratio >= np.quantile(ratio, 0.75)
        if lo.size + bad.sum() > max_intervals:
            break
        mid = 0.5 * (lo[bad] + hi[bad])
        new_lo = np.concatenate([lo[bad], mid])
        new_hi = np.concatenate([mid, hi[bad]])
        nk, ne = _gk15_batch(f, new_lo, new_hi)
        keep = ~bad
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        kvals = np.concatenate([kvals[keep], nk])
        errs = np.concatenate([errs[keep], ne])
    total = kvals.sum(axis=0)
    raise IntegrationError("vector quadrature did not converge", (total, errs.sum(axis=0)))


def _gk15_batch(f, lo, hi, max_elements=4_000_000):
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    x = c[:, None] + h[:, None] * NODES[None, :]
    first = np.asarray(f(x[0]), dtype=float).reshape(15, -1)
    m = first.shape[1]
    step = max(1, max_elements // (15 * m))
    k = np.empty((lo.size, m))
    g = np.empty((lo.size, m))
    for start in range(0, lo.size, step):
        stop = min(lo.size, start + step)
        if start == 0:
            y = np.concatenate([first[None], np.asarray(f(x[1:stop].ravel()), dtype=float).reshape(stop - 1, 15, m)]) \
                if stop > 1 else first[None]
        else:
            y = np.asarray(f(x[start:stop].ravel()), dtype=float).reshape(stop - start, 15, m)
        k[start:stop] = h[start:stop, None] * np.einsum("j,ijm->im", W_KRONROD, y)
        g[start:stop] = h[start:stop, None] * np.einsum("j,ijm->im", W_GAUSS, y)
    with np.errstate(invalid="ignore"):
        err = np.abs(k - g)
    err[~np.isfinite(err)] = np.inf
    return k, err


def find_root(f: Callable[[float], float], bracket: Bracket | tuple[float, float], tol: float = 1e-12) -> float:
    """Root of ``f`` inside ``bracket`` by Brent's method (bisection-safe)."""
    if not isinstance(bracket, Bracket):
        bracket = Bracket(*bracket)
    lo, hi = bracket.lo, bracket.hi
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if not (math.isfinite(flo) and math.isfinite(fhi)) or flo * fhi > 0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={flo!r}, f(hi)={fhi!r}")
    x = optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return min(max(x, lo), hi)


def orthant_probability(lower: Sequence[float], cov) -> float:
    """P(X1 >= l1, X2 >= l2) for X ~ N(0, cov), via 1-D quadrature over the
    standardised first coordinate of the conditional normal tail."""
    cov = np.asarray(cov, dtype=float)
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    rho = cov[0, 1] / (s1 * s2)
    if not -1.0 < rho < 1.0:
        raise ValueError("covariance must be positive definite")
    z1, z2 = lower[0] / s1, lower[1] / s2
    lo = max(z1, -40.0)
    if lo >= 40.0:
        return 0.0
    q = math.sqrt(1.0 - rho * rho)

    def integrand(z):
        return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) * special.ndtr((rho * z - z2) / q)

    res = integrate(integrand, lo, 40.0, tol=1e-12, breakpoints=[0.0])
    return min(max(res.value, 0.0), 1.0)
