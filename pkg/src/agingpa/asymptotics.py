"""Saddle-point asymptotics for large-degree probabilities.

With affine weights the limiting degree distribution is a Laplace-type
integral of exp(-k Psi_k), in t alone without fitness and in (t, s) with a
fitness density.  The minimiser moves with k, so every k gets its own saddle.
All returned probabilities are assembled in log space; ``log_pk`` fields
stay finite long after exp() underflows.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .degree import log_gamma_ratio
from .malthus import malthusian
from .model import (
    ConstantAging, ExponentialAging, LognormalAging, PowerAging, ProcessSpec, TailClass,
    classify_fitness_tail,
)
from .numerics import find_root, orthant_probability

__all__ = [
    "SaddleError", "NonUniqueSaddleError", "Saddle1D", "Saddle2D", "TailPrediction",
    "psi_age", "dpsi_age", "saddle_age", "asymptotic_pk_age", "log_asymptotic_pk_age",
    "psi_age_fitness", "grad_psi_age_fitness", "hessian_age_fitness", "saddle_age_fitness",
    "asymptotic_pk_age_fitness", "log_asymptotic_pk_age_fitness", "predicted_tail",
    "saddle_row", "write_saddle_csv", "tail_shape", "boundary_factor", "orthant_factor",
]


class SaddleError(ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonUniqueSaddleError(SaddleError):
    pass


def _affine_integrable(spec):
    ab = spec.weights.affine_params()
    if ab is None:
        raise SaddleError("saddle asymptotics are implemented for affine weights only")
    if not spec.aging.integrable or isinstance(spec.aging, ConstantAging):
        raise SaddleError("saddle asymptotics need integrable aging")
    return ab


def _no_fitness(spec):
    fd = spec.fitness
    if not fd.degenerate:
        raise SaddleError("the one-variable saddle needs a degenerate fitness")
    if fd.value == 1.0:
        return spec
    return ProcessSpec(spec.weights.scaled(fd.value), spec.aging)


def _alpha(spec, alpha_star):
    return malthusian(spec).alpha_star if alpha_star is None else float(alpha_star)


# ---------------------------------------------------------------- one variable


@dataclass(frozen=True)
class Saddle1D:
    k: int
    t_k: float
    psi_value: float
    second_deriv: float  # k Psi_k''(t_k), direct differentiation
    second_deriv_saddle: float  # same quantity with the stationarity equation substituted
    derivative_residual: float
    alpha_star: float
    valid: bool = True


def psi_age(spec: ProcessSpec, k: int, alpha: float, t):
    """Psi_k(t) = alpha t/k + b G(t)/k - log(1 - e^{-a G(t)})."""
    a, b = spec.weights.affine_params()
    G = spec.aging.G(np.asarray(t, dtype=float))
    return alpha * t / k + b * G / k - np.log(-np.expm1(-a * G))


def dpsi_age(spec: ProcessSpec, k: int, alpha: float, t):
    """Psi_k'(t) = alpha/k + b g/k - a g/(e^{a G} - 1)."""
    a, b = spec.weights.affine_params()
    t = np.asarray(t, dtype=float)
    g, G = spec.aging.g(t), spec.aging.G(t)
    return alpha / k + b * g / k - a * g / np.expm1(a * G)


def _d2psi_age_k(spec, k, alpha, t):
    a, b = spec.weights.affine_params()
    ag = spec.aging
    g, dg, G = ag.g(t), ag.dg(t), ag.G(t)
    em = math.expm1(a * G)
    return b * dg - k * a * dg / em + k * a * a * g * g * (em + 1) / (em * em)


def saddle_age(spec: ProcessSpec, k: int, alpha_star: float | None = None) -> Saddle1D:
    """Minimiser t_k of Psi_k.

    Psi_k' tends to -inf at 0+ and to alpha/k > 0 at infinity; the sign is
    probed on a log grid and more than one sign change is reported rather
    than guessed around.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    spec = _no_fitness(spec)
    a, b = _affine_integrable(spec)
    alpha = _alpha(spec, alpha_star)
    t_max = 10.0
    for _ in range(200):
        if dpsi_age(spec, k, alpha, t_max) > 0:
            break
        t_max *= 2.0
    else:
        raise SaddleError("Psi_k' stays negative on the probe range", {"t_max": t_max})
    grid = np.geomspace(1e-8, t_max, 256)
    d = dpsi_age(spec, k, alpha, grid)
    sign = np.sign(d)
    changes = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if changes.size == 0:
        raise SaddleError("no sign change of Psi_k' on the probe grid", {"t_max": t_max})
    if changes.size > 1:
        raise NonUniqueSaddleError(
            "Psi_k' changes sign more than once: the minimiser is not unique",
            {"crossings": grid[changes].tolist()})
    i = int(changes[0])
    t_k = find_root(lambda t: float(dpsi_age(spec, k, alpha, t)), (grid[i], grid[i + 1]), tol=1e-15)
    g, dg, G = spec.aging.g(t_k), spec.aging.dg(t_k), spec.aging.G(t_k)
    sub = (alpha + b * g) * a * g / -math.expm1(-a * G) - alpha * dg / g
    direct = _d2psi_age_k(spec, k, alpha, t_k)
    resid = abs(float(dpsi_age(spec, k, alpha, t_k)))
    return Saddle1D(k, float(t_k), float(psi_age(spec, k, alpha, t_k)), float(direct), float(sub),
                    resid, alpha, valid=direct > 0)


def _proposition_constant(spec):
    a, _ = spec.weights.affine_params()
    x = a * spec.aging.G_inf
    return a * (2 - math.exp(-x)) / -math.expm1(-x)


def log_asymptotic_pk_age(spec: ProcessSpec, k: int, alpha_star: float | None = None,
                          form: str = "lemma", saddle: Saddle1D | None = None) -> float:
    """log of the Laplace approximation of p_k.

    ``form="lemma"`` uses the exact curvature k Psi_k''(t_k);
    ``form="proposition"`` replaces it by alpha (C g - g'/g) with
    C = a (2 - e^{-a G_inf})/(1 - e^{-a G_inf}).
    """
    spec = _no_fitness(spec)
    a, b = _affine_integrable(spec)
    sd = saddle or saddle_age(spec, k, alpha_star)
    if not sd.valid:
        raise SaddleError("invalid saddle", {"k": k, "second_deriv": sd.second_deriv})
    alpha = sd.alpha_star
    if form == "lemma":
        curv = sd.second_deriv
    elif form == "proposition":
        ag = spec.aging
        g, dg = ag.g(sd.t_k), ag.dg(sd.t_k)
        curv = alpha * (_proposition_constant(spec) * g - dg / g)
    else:
        raise ValueError(f"unknown form {form!r}")
    log_D = special.log_ndtr(sd.t_k * math.sqrt(curv))
    return (float(log_gamma_ratio(k, b / a)) + math.log(alpha) + 0.5 * math.log(2 * math.pi / curv)
            - k * sd.psi_value + log_D)


def asymptotic_pk_age(spec: ProcessSpec, k: int, alpha_star: float | None = None, form: str = "lemma") -> float:
    return math.exp(log_asymptotic_pk_age(spec, k, alpha_star, form))


def boundary_factor(saddle: Saddle1D) -> float:
    """D_k = Phi(t_k sqrt(k Psi_k'')), the Gaussian mass kept on t > 0."""
    return float(special.ndtr(saddle.t_k * math.sqrt(saddle.second_deriv)))


# ---------------------------------------------------------------- two variables


@dataclass(frozen=True)
class Saddle2D:
    k: int
    t_k: float
    s_k: float
    psi_value: float
    hessian: np.ndarray  # k times the Hessian of Psi_k, direct differentiation
    hessian_saddle: np.ndarray  # same, with the stationarity equations substituted
    determinant: float
    gradient_residual: float
    iterations: int
    alpha_star: float
    valid: bool = True
    diagnostics: dict = field(default_factory=dict)


def psi_age_fitness(spec: ProcessSpec, k: int, alpha: float, t, s):
    """Psi_k(t, s) = alpha t/k + b s G/k - log(mu(s))/k - log(1 - e^{-a s G})."""
    a, b = spec.weights.affine_params()
    G = spec.aging.G(np.asarray(t, dtype=float))
    s = np.asarray(s, dtype=float)
    return (alpha * t + b * s * G - spec.fitness.logpdf(s)) / k - np.log(-np.expm1(-a * s * G))


def grad_psi_age_fitness(spec: ProcessSpec, k: int, alpha: float, t: float, s: float):
    a, b = spec.weights.affine_params()
    ag, fd = spec.aging, spec.fitness
    g, G = float(ag.g(t)), float(ag.G(t))
    em = math.expm1(a * s * G)
    dt = alpha / k + b * s * g / k - a * s * g / em
    ds = b * G / k - float(fd.dlogpdf(s)) / k - a * G / em
    return np.array([dt, ds])


def hessian_age_fitness(spec: ProcessSpec, k: int, alpha: float, t: float, s: float, substituted=False):
    """k times the Hessian of Psi_k at (t, s).

    With ``substituted=True`` the stationarity equations are used to
    eliminate k; the two agree only at the saddle.
    """
    a, b = spec.weights.affine_params()
    ag, fd = spec.aging, spec.fitness
    g, dg, G = float(ag.g(t)), float(ag.dg(t)), float(ag.G(t))
    x = a * s * G
    em = math.expm1(x)
    one_m_E = -math.expm1(-x)
    d1, d2 = float(fd.dlogpdf(s)), float(fd.d2logpdf(s))
    if substituted:
        r = alpha + b * s * g
        h11 = r * a * s * g / one_m_E - alpha * dg / g
        h21 = b * g - r / s + a * G * r / one_m_E
        h22 = -d2 + a * G * (b * G - d1) / one_m_E
    else:
        q = (em + 1) / (em * em)
        h11 = b * s * dg - k * a * s * dg / em + k * (a * s * g) ** 2 * q
        h21 = b * g - k * a * g / em + k * a * s * g * a * G * q
        h22 = -d2 + k * (a * G) ** 2 * q
    return np.array([[h11, h21], [h21, h22]])


def _s_update(spec, k, t):
    """Solve the s-equation at fixed t: (e^{a s G} - 1)(b G - (log mu)'(s)) = k a G.

    The left side is negative near 0 (or tends to -a G (shape - 1) for Gamma
    laws) and increasing for log-concave mu, so the root is bracketed.
    """
    a, b = spec.weights.affine_params()
    fd = spec.fitness
    G = float(spec.aging.G(t))

    def h(s):
        return math.expm1(a * s * G) * (b * G - float(fd.dlogpdf(s))) / (k * a * G) - 1.0

    lo = 1e-12
    hi = max(1.0, 2 * math.log1p(k) / (a * G))
    for _ in range(200):
        if h(hi) > 0:
            break
        hi *= 2
    return find_root(h, (lo, hi), tol=1e-15)


def _t_update(spec, k, alpha, s, t_hint):
    a, b = spec.weights.affine_params()
    f = lambda t: float(grad_psi_age_fitness(spec, k, alpha, t, s)[0])
    lo, hi = max(t_hint * 0.5, 1e-10), max(2 * t_hint, 1.0)
    while f(lo) > 0 and lo > 1e-300:
        lo *= 0.1
    while f(hi) < 0:
        hi *= 2
    return find_root(f, (lo, hi), tol=1e-15)


def _check_density(spec):
    fd = spec.fitness
    if fd.degenerate:
        raise SaddleError("a degenerate fitness has no density; use saddle_age")
    tail = classify_fitness_tail(fd)
    if tail.tag in ("HeavyTailed", "Bounded"):
        raise SaddleError(f"the two-variable saddle needs a smooth unbounded density, got {tail.tag}")
    probe = np.geomspace(1.0, 1e3, 20) * max(fd.mean, 1e-3)
    if np.any(fd.dlogpdf(probe[-5:]) >= 0):
        raise SaddleError("fitness density is not eventually decreasing")


def saddle_age_fitness(spec: ProcessSpec, k: int, alpha_star: float | None = None,
                       max_rounds: int = 500, tol: float = 1e-8) -> Saddle2D:
    """Joint minimiser (t_k, s_k): alternate the closed-form s-update with a
    bracketed t-root, then polish with Newton steps on the exact gradient."""
    if k < 1:
        raise ValueError("k must be >= 1")
    a, b = _affine_integrable(spec)
    _check_density(spec)
    alpha = _alpha(spec, alpha_star)
    ag = spec.aging
    # seed: t from the no-fitness saddle with weights scaled by the mean fitness
    t = 1.0
    s = _s_update(spec, k, t)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        t_new = _t_update(spec, k, alpha, s, t)
        s_new = _s_update(spec, k, t_new)
        done = abs(t_new - t) <= 1e-12 * max(1.0, t) and abs(s_new - s) <= 1e-12 * max(1.0, s)
        t, s = t_new, s_new
        if done:
            break
        if rounds >= 30 and np.linalg.norm(grad_psi_age_fitness(spec, k, alpha, t, s)) < 1e-3:
            break
    for _ in range(50):
        grad = grad_psi_age_fitness(spec, k, alpha, t, s)
        if np.linalg.norm(grad) <= 1e-15:
            break
        H = hessian_age_fitness(spec, k, alpha, t, s)
        step = np.linalg.solve(H, -k * grad)
        lam = 1.0
        while (t + lam * step[0] <= 0 or s + lam * step[1] <= 0) and lam > 1e-8:
            lam *= 0.5
        t, s = t + lam * step[0], s + lam * step[1]
        if np.max(np.abs(step) / np.maximum([t, s], 1.0)) < 1e-15:
            break
    grad = grad_psi_age_fitness(spec, k, alpha, t, s)
    resid = float(np.linalg.norm(grad))
    H = hessian_age_fitness(spec, k, alpha, t, s)
    Hs = hessian_age_fitness(spec, k, alpha, t, s, substituted=True)
    det = float(np.linalg.det(H))
    valid = resid <= tol and det > 0 and H[0, 0] > 0
    diag = {"G_t": float(ag.G(t))}
    if resid > tol:
        raise SaddleError("saddle iteration did not converge", {"residual": resid, "t": t, "s": s, "k": k})
    return Saddle2D(k, float(t), float(s), float(psi_age_fitness(spec, k, alpha, t, s)), H, Hs, det,
                    resid, rounds, alpha, valid, diag)


def log_asymptotic_pk_age_fitness(spec: ProcessSpec, k: int, alpha_star: float | None = None,
                                  saddle: Saddle2D | None = None) -> float:
    """log of Gamma-ratio * alpha * e^{-k Psi} * 2 pi/sqrt(det kH) * P(N >= -(t_k, s_k))."""
    a, b = spec.weights.affine_params()
    sd = saddle or saddle_age_fitness(spec, k, alpha_star)
    if not sd.valid:
        raise SaddleError("invalid saddle", {"k": k, "determinant": sd.determinant})
    cov = np.linalg.inv(sd.hessian)
    orth = orthant_probability((-sd.t_k, -sd.s_k), cov)
    return (float(log_gamma_ratio(k, b / a)) + math.log(sd.alpha_star) - k * sd.psi_value
            + math.log(2 * math.pi) - 0.5 * math.log(sd.determinant) + math.log(orth))


def asymptotic_pk_age_fitness(spec: ProcessSpec, k: int, alpha_star: float | None = None) -> float:
    return math.exp(log_asymptotic_pk_age_fitness(spec, k, alpha_star))


def orthant_factor(saddle: Saddle2D) -> float:
    return orthant_probability((-saddle.t_k, -saddle.s_k), np.linalg.inv(saddle.hessian))


# ---------------------------------------------------------------- tail shapes


@dataclass(frozen=True)
class TailPrediction:
    tail_class: TailClass
    exponent: float | None
    correction: dict


def predicted_tail(spec: ProcessSpec, alpha_star: float | None = None) -> TailPrediction:
    """Closed-form large-k shape of p_k for the fitness class of ``spec``.

    ``correction["form"]`` is one of power_law, log_power, exp_log_power,
    exp_exp_sqrt_log, stretched, exponential_truncation, explosive.
    """
    tail = classify_fitness_tail(spec.fitness)
    ag = spec.aging
    ab = spec.weights.affine_params()
    if tail.tag == "HeavyTailed":
        return TailPrediction(tail, None, {"form": "explosive"})
    if ab is None:
        return TailPrediction(tail, None, {"form": "unknown", "reason": "non-affine weights"})
    a, b = ab
    if isinstance(ag, ConstantAging):
        if spec.fitness.degenerate:
            alpha = _alpha(spec, alpha_star)
            return TailPrediction(tail, 1.0 + alpha / (a * spec.fitness.value), {"form": "power_law"})
        return TailPrediction(tail, None, {"form": "unknown", "reason": "stationary fitness mixture"})
    G_inf = ag.G_inf
    if tail.tag == "GeneralExponential":
        tau = 1.0 + tail.theta / (a * G_inf)
        alpha = _alpha(spec, alpha_star)
        if isinstance(ag, ExponentialAging):
            # u = e^{-lam t} turns the age integral into a Gamma integral in log k
            corr = {"form": "log_power", "power": -alpha / ag.lam}
        elif isinstance(ag, PowerAging):
            corr = {"form": "exp_log_power", "coefficient": alpha, "power": 1.0 / ag.lam}
        elif isinstance(ag, LognormalAging):
            corr = {"form": "exp_exp_sqrt_log", "coefficient": alpha}
        else:
            corr = {"form": "aging_dependent"}
        return TailPrediction(tail, tau, corr)
    if tail.tag == "SubExponential":
        fd = spec.fitness
        if not hasattr(fd, "eps"):
            return TailPrediction(tail, None, {"form": "stretched", "reason": "unparametrised density"})
        eps, theta = fd.eps, fd.theta
        return TailPrediction(tail, None, {
            "form": "stretched", "log_power": 1.0 + eps, "coefficient": theta / (a * G_inf) ** (1.0 + eps)})
    ymax = spec.fitness.value if spec.fitness.degenerate else spec.fitness.upper
    rate = -math.log(-math.expm1(-a * ymax * G_inf))
    return TailPrediction(tail, None, {"form": "exponential_truncation", "rate": rate})


def tail_shape(pred: TailPrediction, k):
    """log of the predicted shape (constants dropped) at degrees k."""
    k = np.asarray(k, dtype=float)
    c = pred.correction
    form = c["form"]
    if form == "power_law":
        return -pred.exponent * np.log(k)
    if form == "log_power":
        return -pred.exponent * np.log(k) + c["power"] * np.log(np.log(k))
    if form == "exp_log_power":
        return -pred.exponent * np.log(k) - c["coefficient"] * np.log(k) ** c["power"]
    if form == "exp_exp_sqrt_log":
        return -pred.exponent * np.log(k) - c["coefficient"] * np.exp(np.sqrt(np.log(k)))
    if form == "stretched":
        return -c["coefficient"] * np.log(k) ** c["log_power"]
    if form == "exponential_truncation":
        return -c["rate"] * k
    raise ValueError(f"no shape for form {form!r}")


def saddle_row(spec: ProcessSpec, k: int, alpha: float):
    """[k, t_k, s_k, psi, det_hessian, pk_asymptotic]; s_k is '' without fitness
    and det_hessian is then the scalar curvature k Psi_k''."""
    if not spec.fitness.degenerate:
        sd = saddle_age_fitness(spec, k, alpha)
        lp = log_asymptotic_pk_age_fitness(spec, k, alpha, sd)
        return [k, sd.t_k, sd.s_k, sd.psi_value, sd.determinant, math.exp(lp)]
    sd = saddle_age(spec, k, alpha)
    lp = log_asymptotic_pk_age(spec, k, alpha, saddle=sd)
    return [k, sd.t_k, "", sd.psi_value, sd.second_deriv, math.exp(lp)]


def write_saddle_csv(spec: ProcessSpec, ks, path, alpha_star: float | None = None, threads: int = 1):
    """Columns k, t_k, s_k, psi, det_hessian, pk_asymptotic."""
    alpha = _alpha(spec, alpha_star)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda k: saddle_row(spec, int(k), alpha), ks))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["k", "t_k", "s_k", "psi", "det_hessian", "pk_asymptotic"])
        for r in rows:
            out.writerow([r[0]] + [x if x == "" else f"{x:.17g}" for x in r[1:]])
    return rows
