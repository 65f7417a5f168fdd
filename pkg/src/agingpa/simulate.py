"""Exact event-driven simulation of the branching tree.

Individual i with fitness Y_i and j children has its next birth when its
transformed clock Y_i G(age) crosses the next point of a stationary birth
process, so the age of the next birth is G_inv(G(age) + e/(Y_i f_j)).  Each
individual keeps pos_i = G(current age of its last scheduled birth); the
queue holds one pending birth per reproducing individual.

Uniforms come from splitmix64 hashed on (seed, individual, child index), so
a run is a pure function of its seed.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from array import array
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .degree import DegreeDistribution
from .model import ProcessSpec

__all__ = [
    "Individual", "Population", "SimulationSummary", "ExplosivePopulationError",
    "InsufficientCohortError", "CohortEstimate", "next_birth_age", "run", "empirical_pk",
    "growth_rate", "cohort_counts", "cohort_exponent", "cohort_estimates", "summarize",
    "uniform", "monotone_trend",
]

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_ID_MULT = 0xD1B54A32D192ED03
_FITNESS_DRAW = -1


class ExplosivePopulationError(ValueError):
    pass


class InsufficientCohortError(ValueError):
    pass


def _mix(z):
    z = (z + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _individual_key(seed_key, ident):
    return _mix(seed_key ^ ((ident * _ID_MULT) & _M64))


def _draw(key, j):
    h = _mix((key + (j + 1) * _GOLDEN) & _M64)
    return ((h >> 11) + 0.5) * 2.0 ** -53


def uniform(seed: int, ident: int, j: int) -> float:
    """The uniform in (0, 1) used for draw j of individual ``ident``
    (j = -1 is the fitness draw, j >= 0 the gap before child j + 1)."""
    return _draw(_individual_key(_mix(seed & _M64), ident), j)


def next_birth_age(w, ag, Y: float, k: int, age: float, e: float):
    """Age of the next birth given k children so far, or None if the
    individual never gives birth again."""
    if not (age >= 0 and e > 0):
        raise ValueError("need age >= 0 and e > 0")
    pos = float(ag.G(age)) + e / (Y * float(w(k)))
    if pos >= ag.G_inf:
        return None
    return ag.G_inv_scalar(pos)


@dataclass(frozen=True)
class Individual:
    id: int
    parent: int  # -1 for the root
    birth_time: float
    fitness: float
    children: int
    next_transformed_time: float


@dataclass
class Population:
    spec: ProcessSpec
    seed: int
    parent: array
    birth_time: array
    fitness: array
    children: array
    position: array
    clock: float
    explosion_flag: bool
    stop_reason: str
    track_limit: int | None = None
    roots: int = 1
    diagnostics: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.birth_time)

    @property
    def births(self):
        return self.size - 1

    def individual(self, i):
        return Individual(i, self.parent[i], self.birth_time[i], self.fitness[i], self.children[i],
                          self.position[i])

    def event_times(self):
        return np.frombuffer(self.birth_time, dtype=np.float64)[self.roots:]

    def event_parents(self):
        return np.frombuffer(self.parent, dtype=np.int64)[self.roots:]

    def births_array(self):
        return np.frombuffer(self.birth_time, dtype=np.float64)

    def write_events(self, path):
        """CSV columns time, parent, child, fitness_of_child."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["time", "parent", "child", "fitness_of_child"])
            for c in range(self.roots, self.size):
                out.writerow([f"{self.birth_time[c]:.17g}", self.parent[c], c, f"{self.fitness[c]:.17g}"])


def run(spec: ProcessSpec, *, seed: int = 0, max_population: int | None = None, max_time: float | None = None,
        max_events: int = 10**7, track_limit: int | None = None, roots: int = 1,
        explosion_window: int = 10**4) -> Population:
    """Simulate from ``roots`` independent individuals born at time 0 (one
    by default).

    Stops at the first of: population reaching ``max_population``, the next
    birth lying beyond ``max_time``, ``max_events`` births, or extinction of
    all pending births.  With ``track_limit`` only individuals with id below
    the limit reproduce; later ones are recorded at birth and stay childless
    (a closed cohort).
    """
    if max_population is None and max_time is None and max_events is None:
        raise ValueError("at least one stop rule is required")
    w, ag, fd = spec.weights, spec.aging, spec.fitness
    G_inf = ag.G_inf
    G_inv = ag.G_inv_scalar
    ppf = fd.ppf_scalar
    degenerate = fd.degenerate
    seed_key = _mix(seed & _M64)
    max_population = max_population or math.inf
    max_time = math.inf if max_time is None else float(max_time)
    max_events = max_events or math.inf
    limit = math.inf if track_limit is None else track_limit

    f_table = [float(x) for x in w(np.arange(1024))]

    def f(k):
        nonlocal f_table
        if k >= len(f_table):
            f_table = [float(x) for x in w(np.arange(2 * k + 2))]
        return f_table[k]

    if roots < 1:
        raise ValueError("roots must be >= 1")
    parent = array("q", [-1] * roots)
    birth = array("d", [0.0] * roots)
    fit = array("d")
    children = array("q", [0] * roots)
    position = array("d", [0.0] * roots)
    log_ = math.log

    def fitness_of(i, key):
        return fd.value if degenerate else ppf(_draw(key, _FITNESS_DRAW))

    heap = []

    def schedule(i, key, j, Y, pos):
        # j children so far; draw the exponential gap before child j + 1
        pos = pos - log_(_draw(key, j)) / (Y * f(j))
        if pos >= G_inf:
            position[i] = math.inf
            return
        position[i] = pos
        heapq.heappush(heap, (birth[i] + G_inv(pos), i, j))

    for r in range(roots):
        key_r = _individual_key(seed_key, r)
        fit.append(fitness_of(r, key_r))
        if r < limit:
            schedule(r, key_r, 0, fit[r], 0.0)
    clock = 0.0
    n_events = 0
    explosion = False
    reason = "extinct"
    window_start = 0.0
    window_counts: dict = {}
    last_window = None
    heappop = heapq.heappop
    while heap:
        if len(birth) >= max_population:
            reason = "max_population"
            break
        if n_events >= max_events:
            reason = "max_events"
            break
        t, p, j = heap[0]
        if t > max_time:
            clock = max_time
            reason = "max_time"
            break
        heappop(heap)
        if t < clock:
            raise AssertionError("event queue returned a time in the past")
        clock = t
        c = len(birth)
        parent.append(p)
        birth.append(t)
        children.append(0)
        children[p] = j + 1
        key_c = _individual_key(seed_key, c)
        Yc = fitness_of(c, key_c)
        fit.append(Yc)
        position.append(0.0)
        n_events += 1
        if c < limit:
            schedule(c, key_c, 0, Yc, 0.0)
        schedule(p, _individual_key(seed_key, p), j + 1, fit[p], position[p])
        window_counts[p] = window_counts.get(p, 0) + 1
        if n_events % explosion_window == 0:
            advance = clock - window_start
            top = max(window_counts.values())
            last_window = {"advance": advance, "dominant_share": top / explosion_window, "clock": clock}
            if advance < 1e-12:
                explosion = True
            window_start = clock
            window_counts = {}
    if reason == "max_events" and last_window is not None and not explosion:
        # accumulation of birth times around a single individual: the
        # window advanced by a vanishing fraction of the clock and one parent
        # produced at least half of the window's births
        if last_window["advance"] < 1e-4 * max(last_window["clock"], 1.0) and last_window["dominant_share"] >= 0.5:
            explosion = True
    diag = {"events": n_events, "pending": len(heap), "last_window": last_window}
    return Population(spec, seed, parent, birth, fit, children, position, clock, explosion, reason,
                      track_limit, roots, diag)


# ---------------------------------------------------------------- estimators


def _counts_at(pop, t):
    births = pop.births_array()
    n = int(np.searchsorted(births, t, side="right"))
    parents = pop.event_parents()[: max(n - pop.roots, 0)]
    return np.bincount(parents, minlength=n), n


def empirical_pk(pop: Population, t: float | None = None) -> DegreeDistribution:
    """Fraction of individuals born by time t having k children at time t."""
    t = pop.clock if t is None else float(t)
    if t > pop.clock * (1 + 1e-15):
        raise ValueError(f"t={t} exceeds the simulated horizon {pop.clock}")
    counts, n = _counts_at(pop, t)
    hist = np.bincount(counts)
    probs = hist / n
    ks = np.arange(hist.size)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    return DegreeDistribution(ks, probs, logp, 0.0, "Empirical", {"n": n})


def growth_rate(pop: Population, min_size: int = 1000) -> float:
    """Least-squares slope of log(size) against time over the last half of
    the observed time range."""
    if pop.explosion_flag:
        raise ExplosivePopulationError("explosive population: no exponential growth regime")
    if pop.size < min_size:
        raise ValueError(f"population of {pop.size} is below the {min_size} needed for a growth estimate")
    times = pop.births_array()
    sizes = np.arange(1, times.size + 1, dtype=float)
    times = times[pop.roots - 1:]
    sizes = sizes[pop.roots - 1:]
    mid = 0.5 * (times[0] + times[-1])
    sel = times >= mid
    tt, ss = times[sel], sizes[sel]
    if tt.size > 20000:
        idx = np.linspace(0, tt.size - 1, 20000).astype(int)
        tt, ss = tt[idx], ss[idx]
    slope, _ = np.polyfit(tt, np.log(ss), 1)
    return float(slope)


def cohort_counts(pop: Population, cohort: tuple[float, float], age: float) -> np.ndarray:
    """Children counts at the given age of individuals born in the window."""
    births = pop.births_array()
    lo = int(np.searchsorted(births, cohort[0], side="left"))
    hi = int(np.searchsorted(births, cohort[1], side="right"))
    if hi <= lo:
        return np.zeros(0, dtype=int)
    if births[hi - 1] + age > pop.clock and pop.stop_reason != "extinct":
        raise ValueError("the cohort has not been observed up to the requested age")
    parents = pop.event_parents()
    times = pop.event_times()
    in_cohort = (parents >= lo) & (parents < hi)
    p = parents[in_cohort]
    ok = times[in_cohort] - births[p] <= age
    return np.bincount(p[ok] - lo, minlength=hi - lo)


@dataclass(frozen=True)
class CohortEstimate:
    mle: float
    hill: float
    loglog: float
    n: int
    k_min: int


def _cohort_loglik(c, counts_hist, beta):
    k = np.arange(counts_hist.size)
    bp = beta + c
    logp = (math.log(c) + special.gammaln(bp) - special.gammaln(beta)
            + special.gammaln(k + beta) - special.gammaln(k + bp + 1))
    return float(counts_hist @ logp)


def cohort_estimates(pop: Population, cohort: tuple[float, float], age: float, *, k_min: int = 10,
                     min_size: int = 10**4) -> CohortEstimate:
    """Tail exponent of the cohort's children counts at the given age.

    ``mle`` fits tau = 1 + c in the one-parameter family of cohort laws of
    affine weights with exponential fitness; ``hill`` and ``loglog`` are
    model-free estimates on k >= k_min.
    """
    counts = cohort_counts(pop, cohort, age)
    n = counts.size
    if n < min_size:
        raise InsufficientCohortError(f"cohort of {n} individuals is below the required {min_size}")
    hist = np.bincount(counts).astype(float)
    mle = math.nan
    ab = pop.spec.weights.affine_params()
    if ab is not None:
        beta = ab[1] / ab[0]
        res = optimize.minimize_scalar(lambda lc: -_cohort_loglik(math.exp(lc), hist, beta),
                                       bounds=(math.log(1e-3), math.log(1e3)), method="bounded",
                                       options={"xatol": 1e-10})
        mle = 1.0 + math.exp(res.x)
    tail = counts[counts >= k_min]
    hill = 1.0 + tail.size / np.sum(np.log(tail / (k_min - 0.5))) if tail.size else math.nan
    ks = np.nonzero(hist)[0]
    ks = ks[ks >= 1]
    loglog = math.nan
    if ks.size >= 3:
        edges = np.unique(np.round(np.geomspace(1, ks.max() + 1, 25)).astype(int))
        centers, dens = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            mass = hist[lo:hi].sum()
            if mass > 0:
                centers.append(math.sqrt(lo * (hi - 1)) if hi - 1 > lo else lo)
                dens.append(mass / (hi - lo) / n)
        sel = np.array(centers) >= min(k_min, ks.max())
        if sel.sum() >= 3:
            loglog = -float(np.polyfit(np.log(np.array(centers)[sel]), np.log(np.array(dens)[sel]), 1)[0])
    return CohortEstimate(mle, float(hill), loglog, n, k_min)


def cohort_exponent(pop: Population, cohort: tuple[float, float], age: float, estimator: str = "mle",
                    **kwargs) -> float:
    est = cohort_estimates(pop, cohort, age, **kwargs)
    return getattr(est, estimator)


def monotone_trend(values, alpha: float = 0.01):
    """Kendall tau test for a decreasing trend; returns (decreasing, p_value)."""
    res = stats.kendalltau(np.arange(len(values)), values, alternative="less")
    return bool(res.pvalue < alpha), float(res.pvalue)


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class SimulationSummary:
    final_size: int
    final_time: float
    degree_histogram: list
    growth_rate_estimate: float | None
    explosion_flag: bool
    stop_reason: str
    seed: int

    def to_json(self):
        return json.dumps({
            "final_size": self.final_size, "final_time": self.final_time,
            "growth_rate": self.growth_rate_estimate, "explosion_flag": self.explosion_flag,
            "stop_reason": self.stop_reason, "seed": self.seed, "histogram": self.degree_histogram,
        }, indent=2)


def summarize(pop: Population) -> SimulationSummary:
    hist = np.bincount(np.frombuffer(pop.children, dtype=np.int64)).tolist()
    rate = None
    if not pop.explosion_flag and pop.size >= 1000:
        rate = growth_rate(pop)
    return SimulationSummary(pop.size, pop.clock, hist, rate, pop.explosion_flag, pop.stop_reason, pop.seed)
