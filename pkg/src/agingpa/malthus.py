"""Laplace transforms of birth processes, the supercritical/subcritical/
explosive trichotomy and the Malthusian parameter.

The expected number of children at an independent Exp(alpha) time is

    L(alpha) = int_0^inf alpha e^{-alpha t} m(t) dt,   m(t) = E[V_{Y G(t)}],

computed after the substitution u = alpha t so the integrand always decays
like e^{-u}.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as sp_integrate
from scipy import sparse

from .model import (
    AffineWeights, ConstantAging, CustomWeights, PowerWeights, ProcessSpec, WeightSequence,
    classify_fitness_tail, classify_weights,
)
from .numerics import BracketError, IntegrationError, find_root, integrate

__all__ = [
    "Verdict", "MalthusianResult", "NotSupercriticalError", "ExplosiveError", "SubcriticalError",
    "stationary_laplace", "forward_occupancy", "stationary_mean", "mean_offspring_at",
    "process_laplace", "alpha_tilde", "supercriticality", "malthusian",
]


@dataclass(frozen=True)
class Verdict:
    tag: str  # "Explosive" | "Subcritical" | "Supercritical"
    evidence: dict = field(default_factory=dict)

    def __str__(self):
        bits = ", ".join(f"{k}={v}" for k, v in self.evidence.items())
        return f"{self.tag} ({bits})"


@dataclass(frozen=True)
class MalthusianResult:
    alpha_star: float
    residual: float
    derivative_at_root: float
    verdict: Verdict
    alpha_tilde: float = 0.0
    bracket: tuple = ()
    monotone: bool = True


class NotSupercriticalError(ValueError):
    def __init__(self, verdict: Verdict):
        super().__init__(str(verdict))
        self.verdict = verdict


class ExplosiveError(NotSupercriticalError):
    pass


class SubcriticalError(NotSupercriticalError):
    pass


# ------------------------------------------------------- stationary process


def _is_superlinear(w: WeightSequence) -> bool:
    if isinstance(w, AffineWeights):
        return False
    if isinstance(w, PowerWeights):
        return w.q > 1
    if isinstance(w, CustomWeights):
        return w.tail[0] == "power" and w.tail[1] > 1
    return classify_weights(w, 10**6).tag == "Superlinear"


def stationary_laplace(w: WeightSequence, alpha: float, rtol: float = 1e-15) -> float:
    """sum_{k>=1} prod_{i<k} f_i / (alpha + f_i), or inf.

    Affine (and affine-tailed) weights use the closed form b/(alpha - a) for
    the affine part; other weights are summed in log space until the terms
    are negligible.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if _is_superlinear(w):
        return math.inf
    tail = w.tail_affine()
    if tail is not None:
        K0, a, b = tail
        if alpha <= a:
            return math.inf
        if K0 == 0:
            return b / (alpha - a)
        k = np.arange(K0)
        logs = np.concatenate([[0.0], np.cumsum(-np.log1p(alpha / w(k)))])
        head = math.fsum(np.exp(logs[1:K0]))  # products for k = 1 .. K0-1
        b_shift = a * K0 + b
        return head + math.exp(logs[K0]) * (1.0 + b_shift / (alpha - a))
    total, carry, lo, chunk = 0.0, 0.0, 0, 1 << 14
    while lo < 10**9:
        k = np.arange(lo, lo + chunk)
        logs = carry + np.cumsum(-np.log1p(alpha / w(k)))
        terms = np.exp(logs)
        total += math.fsum(terms)
        carry = logs[-1]
        lo += chunk
        # terms are decreasing; stop once the remainder is below rtol
        if terms[-1] * lo < rtol * total or terms[-1] == 0.0:
            return total
        chunk = min(chunk * 2, 1 << 22)
    return math.inf


def forward_occupancy(w: WeightSequence, s_values, kmax: int | None = None, tol: float = 1e-12):
    """P(V_s = k) for the stationary process by integrating the forward
    equations dP_k/ds = f_{k-1} P_{k-1} - f_k P_k.

    Returns (P, tail) with P of shape (len(s_values), kmax + 1); ``tail`` is
    the escaped mass 1 - sum_k P_k.  When kmax is None it is doubled until
    the escaped mass at the largest s is below ``tol``.
    """
    s_values = np.atleast_1d(np.asarray(s_values, dtype=float))
    s_max = float(s_values.max()) if s_values.size else 0.0
    auto = kmax is None
    kmax = 32 if auto else int(kmax)
    if kmax < 0:
        raise ValueError("kmax must be >= 0")
    while True:
        P, tail = _forward_solve(w, s_values, s_max, kmax)
        if not auto or tail.max() < tol or kmax > 1 << 16:
            return P, tail
        kmax *= 2


def _forward_solve(w, s_values, s_max, kmax):
    n = kmax + 1
    f = w(np.arange(n))
    A = sparse.diags([-f, f[:-1]], [0, -1], format="csc")
    y0 = np.zeros(n)
    y0[0] = 1.0
    if s_max == 0:
        P = np.tile(y0, (s_values.size, 1))
        return P, np.zeros(s_values.size)
    order = np.argsort(s_values)
    sol = sp_integrate.solve_ivp(lambda s, y: A @ y, (0.0, s_max), y0, method="Radau", jac=A,
                                 t_eval=np.unique(s_values), rtol=1e-11, atol=1e-14)
    grid = sol.t
    P = np.empty((s_values.size, n))
    for i in order:
        j = np.searchsorted(grid, s_values[i])
        P[i] = sol.y[:, j]
    P = np.clip(P, 0.0, 1.0)
    return P, np.clip(1.0 - P.sum(axis=1), 0.0, 1.0)


def stationary_mean(w: WeightSequence, s):
    """E[V_s] for the stationary process with weights w."""
    ab = w.affine_params()
    s = np.asarray(s, dtype=float)
    if ab is not None:
        a, b = ab
        return (b / a) * np.expm1(a * s)
    P, _ = forward_occupancy(w, s.ravel())
    return (P @ np.arange(P.shape[1])).reshape(s.shape)


# ------------------------------------------------------- aging and fitness


def _fitness_expectation(fd, h, n=96):
    """E[h(Y)] by Gauss-Legendre in the quantile variable (bounded supports)."""
    if fd.degenerate:
        return h(np.array([fd.value]))[0]
    x, wts = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1)
    return 0.5 * float(wts @ h(fd.ppf(u)))


def mean_offspring_at(spec: ProcessSpec, t: float) -> float:
    """m(t) = E[V_{Y G(t)}]; ``t = inf`` gives the lifetime mean."""
    if not t >= 0:
        raise ValueError("t must be >= 0")
    G = spec.aging.G_inf if math.isinf(t) else float(spec.aging.G(t))
    if math.isinf(G):
        return math.inf
    ab = spec.weights.affine_params()
    fd = spec.fitness
    if ab is not None:
        a, b = ab
        if G == 0:
            return 0.0
        return (b / a) * fd.mgf_m1(a * G)
    if _is_superlinear(spec.weights):
        return math.inf
    if math.isinf(fd.upper):
        tail = spec.weights.tail_affine()
        if tail is not None and a_times_g_exceeds(fd, tail[1] * G):
            return math.inf
    return _fitness_expectation(fd, lambda y: stationary_mean(spec.weights, y * G))


def a_times_g_exceeds(fd, x):
    return x >= fd.mgf_abscissa


def _m_function(spec: ProcessSpec):
    """Vectorised t -> m(t) for the affine case, scalar loop otherwise."""
    ab = spec.weights.affine_params()
    fd = spec.fitness
    if ab is not None:
        a, b = ab

        def m(t):
            G = spec.aging.G(t)
            return (b / a) * np.array([fd.mgf_m1(a * gi) if gi > 0 else 0.0 for gi in np.atleast_1d(G)]).reshape(np.shape(G))

        if fd.degenerate:
            m = lambda t: (b / a) * np.expm1(a * fd.value * spec.aging.G(t))
        elif fd.family == "general_exponential" and fd.h is None:
            k, th = fd.shape, fd.theta

            def m(t):
                x = a * spec.aging.G(t)
                with np.errstate(divide="ignore", invalid="ignore"):
                    out = (b / a) * np.expm1(-k * np.log1p(-x / th))
                return np.where(x < th, out, np.inf)

        return m
    if spec.aging.integrable and math.isfinite(spec.aging.G_inf) and not math.isinf(fd.upper):
        try:
            h = _lifetime_mean_interpolant(spec)
        except TypeError:  # unhashable spec
            h = _lifetime_mean_interpolant.__wrapped__(spec)
        return lambda t: h(spec.aging.G(np.asarray(t, dtype=float)))
    w = spec.weights
    tail = w.tail_affine()
    if fd.degenerate:
        y, wy = np.array([fd.value]), np.array([1.0])
    else:
        x, wts = np.polynomial.legendre.leggauss(96)
        y, wy = fd.ppf(0.5 * (x + 1)), 0.5 * wts

    def m(t):
        # one forward solve serves every (fitness node, time) pair
        G = np.atleast_1d(spec.aging.G(np.asarray(t, dtype=float)))
        out = wy @ stationary_mean(w, np.outer(y, G))
        if math.isinf(fd.upper) and tail is not None:
            out = np.where([a_times_g_exceeds(fd, tail[1] * g) for g in G], np.inf, out)
        return out.reshape(np.shape(t))

    return m


@functools.lru_cache(maxsize=32)
def _lifetime_mean_interpolant(spec, n=96):
    """Chebyshev interpolant of s -> E[V_{Y s}] on [0, G_inf]; the mean is
    analytic in s, so this is accurate to rounding and costs one ODE solve."""
    fd, w = spec.fitness, spec.weights
    if fd.degenerate:
        y, wy = np.array([fd.value]), np.array([1.0])
    else:
        x, wts = np.polynomial.legendre.leggauss(96)
        y, wy = fd.ppf(0.5 * (x + 1)), 0.5 * wts
    cheb = np.polynomial.chebyshev.Chebyshev
    s_max = spec.aging.G_inf
    nodes = 0.5 * s_max * (1 - np.cos(np.pi * (np.arange(n) + 0.5) / n))
    vals = wy @ stationary_mean(w, np.outer(y, nodes))
    return cheb.fit(nodes, vals, n - 1, domain=[0.0, s_max])


def _growth_rate_of_m(spec, m, t1=40.0, t2=60.0):
    """Asymptotic exponential growth rate of m(t), probed at large t."""
    m1, m2 = float(m(np.array([t1]))[0]), float(m(np.array([t2]))[0])
    if not (math.isfinite(m1) and math.isfinite(m2)):
        return math.inf, math.inf
    if m2 <= 0 or m1 <= 0:
        return 0.0, max(m1, m2)
    rho = max(math.log(m2 / m1) / (t2 - t1), 0.0)
    return rho, m2 * math.exp(-rho * t2)


def process_laplace(spec: ProcessSpec, alpha: float, tol: float = 1e-13) -> float:
    """E[number of children born before an independent Exp(alpha) time]."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    w, fd = spec.weights, spec.fitness
    if _is_superlinear(w):
        return math.inf
    if classify_fitness_tail(fd).tag == "HeavyTailed":
        return math.inf
    if isinstance(spec.aging, ConstantAging):
        return _stationary_fitness_laplace(w, fd, alpha, tol)
    m = _m_function(spec)
    if spec.aging.integrable:
        m_inf = mean_offspring_at(spec, math.inf)
        if math.isfinite(m_inf):
            f = lambda u: np.exp(-u) * m(u / alpha)
            return integrate(f, 0.0, tol=tol, rtol=tol, decay_rate=1.0, decay_scale=max(m_inf, 1.0)).value
    rho, c = _growth_rate_of_m(spec, m)
    if not alpha > rho * (1 + 1e-9):
        return math.inf
    rate = 1.0 - rho / alpha
    f = lambda u: np.exp(-u) * m(u / alpha)
    return integrate(f, 0.0, tol=tol, rtol=tol, decay_rate=rate, decay_scale=max(10 * c, 1.0)).value


def _stationary_fitness_laplace(w, fd, alpha, tol):
    # rates Y f_k: the transform of the scaled process is L_f(alpha / Y)
    if fd.degenerate:
        return stationary_laplace(w, alpha / fd.value)
    tail = w.tail_affine()
    if tail is not None and tail[1] * fd.upper >= alpha:
        return math.inf
    ab = w.affine_params()
    if ab is not None:
        a, b = ab
        f = lambda y: fd.pdf(y) * b * y / (alpha - a * y)
    else:
        vec = np.vectorize(lambda y: stationary_laplace(w, alpha / y) if y > 0 else 0.0)
        f = lambda y: fd.pdf(y) * vec(y)
    if math.isfinite(fd.upper):
        return integrate(f, fd.lower, fd.upper, tol=tol, rtol=tol).value
    return integrate(f, fd.lower, tol=tol, rtol=tol).value


# ------------------------------------------------------- verdicts


def alpha_tilde(spec: ProcessSpec) -> float:
    """Lower edge of the domain where the Laplace transform is finite."""
    w, fd, ag = spec.weights, spec.fitness, spec.aging
    if _is_superlinear(w) or classify_fitness_tail(fd).tag == "HeavyTailed":
        return math.inf
    if isinstance(ag, ConstantAging):
        tail = w.tail_affine()
        if tail is None:
            return 0.0
        return tail[1] * fd.upper
    if ag.integrable and math.isfinite(mean_offspring_at(spec, math.inf)):
        return 0.0
    rho, _ = _growth_rate_of_m(spec, _m_function(spec))
    return rho


def supercriticality(spec: ProcessSpec) -> Verdict:
    """Explosive / Subcritical / Supercritical classification.

    For affine weights the supercritical test is phi_Y(a G_inf) > 1 + a/b,
    which is (b/a)(phi_Y(a G_inf) - 1) > 1.
    """
    w, fd, ag = spec.weights, spec.fitness, spec.aging
    wc = classify_weights(w, 10**4) if not isinstance(w, AffineWeights) else None
    tail = classify_fitness_tail(fd)
    ev = {"weight_class": wc.tag if wc else "Affine", "fitness_tail": tail.tag,
          "mgf_abscissa": fd.mgf_abscissa, "G_inf": ag.G_inf}
    if _is_superlinear(w):
        ev["reason"] = "superlinear weights: sum 1/f_k converges, infinitely many births in finite time"
        return Verdict("Explosive", ev)
    if tail.tag == "HeavyTailed":
        ev["reason"] = "heavy-tailed fitness: phi_Y(x) = inf for every x > 0"
        return Verdict("Explosive", ev)
    tail_ab = w.tail_affine()
    a = tail_ab[1] if tail_ab else None
    if isinstance(ag, ConstantAging):
        if math.isinf(fd.upper) and a is not None:
            ev["reason"] = "unbounded fitness without aging: Laplace transform infinite for every alpha"
            return Verdict("Explosive", ev)
        if math.isinf(fd.upper) and fd.mgf_abscissa < math.inf:
            ev["reason"] = "mgf pole reached in finite time without aging"
            return Verdict("Explosive", ev)
        ev["limit_mean_offspring"] = math.inf
        ev["reason"] = "no aging: lifetime offspring unbounded"
        return Verdict("Supercritical", ev)
    if a is not None and ag.integrable:
        x_inf = a * ag.G_inf
        ev["a_G_inf"] = x_inf
        if fd.mgf_abscissa < x_inf:
            ev["reason"] = f"mgf pole at {fd.mgf_abscissa:g} < a G_inf = {x_inf:g}: phi_Y(a G(t)) = inf at finite t"
            return Verdict("Explosive", ev)
    if ag.integrable:
        m_inf = mean_offspring_at(spec, math.inf)
    else:
        m_inf = math.inf
    ev["limit_mean_offspring"] = m_inf
    if w.affine_params() is not None and ag.integrable:
        a_, b_ = w.affine_params()
        ev["threshold_phi"] = 1 + a_ / b_
        ev["phi_at_aG_inf"] = fd.mgf(a_ * ag.G_inf) if fd.mgf_abscissa > a_ * ag.G_inf else math.inf
    if not m_inf > 1:
        ev["reason"] = "limit mean offspring <= 1"
        return Verdict("Subcritical", ev)
    ev["reason"] = "limit mean offspring > 1"
    return Verdict("Supercritical", ev)


def _refuse(verdict):
    cls = ExplosiveError if verdict.tag == "Explosive" else SubcriticalError
    raise cls(verdict)


def malthusian(spec: ProcessSpec, tol: float = 1e-13) -> MalthusianResult:
    """Solve L(alpha*) = 1 by bracket expansion and Brent's method."""
    verdict = supercriticality(spec)
    if verdict.tag != "Supercritical":
        _refuse(verdict)
    L = lambda al: process_laplace(spec, al)
    at = alpha_tilde(spec)
    if math.isinf(at):
        _refuse(Verdict("Explosive", {**verdict.evidence, "reason": "Laplace transform infinite for every alpha"}))
    # limit L(alpha) > 1 as alpha decreases to alpha_tilde
    probes = [at * (1 + 10.0**-j) if at > 0 else 10.0**-j for j in range(2, 7)]
    vals = [L(p) for p in probes]
    if not max(vals) > 1:
        ev = {**verdict.evidence, "reason": "L(alpha) <= 1 near alpha_tilde", "alpha_tilde": at,
              "probe_max": max(vals)}
        _refuse(Verdict("Subcritical", ev))
    lo = next(p for p, v in zip(reversed(probes), reversed(vals)) if v > 1)
    hi = max(2 * at, 2 * lo, 1.0)
    while L(hi) >= 1:
        lo = hi
        hi *= 2
        if hi > 1e12:
            raise BracketError("could not bracket the Malthusian parameter")
    grid = np.geomspace(lo, hi, 9)
    lv = np.array([L(x) for x in grid])
    monotone = bool(np.all(np.diff(lv[np.isfinite(lv)]) <= 1e-12 * np.abs(lv[np.isfinite(lv)][1:])))
    root = find_root(lambda al: L(al) - 1.0, (lo, hi), tol=tol * max(1.0, lo))
    residual = abs(L(root) - 1.0)
    h = 1e-5 * root
    deriv = (L(root + h) - L(root - h)) / (2 * h)
    if not (math.isfinite(deriv) and deriv < 0):
        ev = {**verdict.evidence, "reason": "derivative at the root is not finite and negative"}
        raise SubcriticalError(Verdict("Subcritical", ev))
    return MalthusianResult(root, residual, deriv, verdict, at, (lo, hi), monotone)
