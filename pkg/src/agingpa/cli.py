"""Command-line front end.

    agingpa {malthusian,degdist,asymptotics,simulate,validate} --config cfg.json [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
3 explosive process, 4 subcritical process, 5 validation check failed.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import asymptotics, degree, malthus, simulate
from .model import (
    ConstantAging, GeneralExponential, ProcessSpec, ValidationError, make_aging, make_fitness, make_weights,
)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_EXPLOSIVE, EXIT_SUBCRITICAL, EXIT_VALIDATION = 0, 1, 2, 3, 4, 5
COMMANDS = ("malthusian", "degdist", "asymptotics", "simulate", "validate")

_NUM = (int, float)
_FAMILIES = {
    "weights": {
        "affine": {"a": _NUM, "b": _NUM},
        "power": {"c": _NUM, "q": _NUM, "shift": _NUM},
        "custom": {"table": list, "tail": list},
    },
    "aging": {
        "constant": {},
        "none": {},
        "exponential": {"lambda": _NUM},
        "power": {"lambda": _NUM},
        "lognormal": {"l1": _NUM, "l2": _NUM, "l3": _NUM, "normalized": bool},
        "tabulated": {"times": list, "values": list, "tail_rate": _NUM},
    },
    "fitness": {
        "degenerate": {"value": _NUM},
        "none": {},
        "uniform": {"gamma": _NUM},
        "exponential": {"theta": _NUM},
        "gamma": {"theta": _NUM, "shape": _NUM},
        "general_exponential": {"theta": _NUM, "shape": _NUM},
        "subexponential": {"theta": _NUM, "eps": _NUM},
        "pareto": {"alpha": _NUM, "xm": _NUM},
    },
}
_TOP = {
    "weights": dict, "aging": dict, "fitness": dict, "command": str, "kmax": int, "ks": list,
    "t": _NUM, "lifetime": bool, "method": str, "stop": dict, "seed": int, "roots": int,
    "track_limit": int, "tolerances": dict, "output": str, "validate": dict,
}
_STOP = {"max_population": int, "max_time": _NUM, "max_events": int}
_TOL = {"rtol": _NUM}
_VALIDATE = {"population": int, "seed": int}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    spec: ProcessSpec
    command: str | None = None
    kmax: int = 100
    ks: list | None = None
    t: float | None = None
    lifetime: bool = False
    method: str = "auto"
    stop: dict = field(default_factory=lambda: {"max_population": 10**5})
    seed: int = 0
    roots: int = 1
    track_limit: int | None = None
    tolerances: dict = field(default_factory=lambda: {"rtol": 1e-10})
    output: str | None = None
    validate: dict = field(default_factory=dict)


def _check_type(path, value, expected):
    if expected is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
        name = "number"
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
        name = "integer"
    else:
        ok = isinstance(value, expected)
        name = expected.__name__
    if not ok:
        raise ConfigError(f"{path}: expected {name}, got {type(value).__name__}")


def _check_keys(path, obj, schema):
    for key, value in obj.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{where}: unknown key")
        _check_type(where, value, schema[key])


def _component(section, obj):
    if "family" not in obj:
        raise ConfigError(f"{section}.family: missing")
    fam = obj["family"]
    if not isinstance(fam, str) or fam.lower() not in _FAMILIES[section]:
        raise ConfigError(f"{section}.family: unknown family {fam!r}; expected one of "
                          f"{sorted(_FAMILIES[section])}")
    params = {k: v for k, v in obj.items() if k != "family"}
    _check_keys(section, params, _FAMILIES[section][fam.lower()])
    maker = {"weights": make_weights, "aging": make_aging, "fitness": make_fitness}[section]
    try:
        return maker(fam, **params)
    except (ValidationError, ValueError, KeyError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Validate a JSON configuration and build the RunConfig."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    _check_keys("", raw, _TOP)
    if "weights" not in raw:
        raise ConfigError("weights: missing")
    spec = ProcessSpec(
        _component("weights", raw["weights"]),
        _component("aging", raw.get("aging", {"family": "constant"})),
        _component("fitness", raw.get("fitness", {"family": "degenerate"})),
    )
    cfg = RunConfig(spec)
    if "command" in raw:
        if raw["command"] not in COMMANDS:
            raise ConfigError(f"command: expected one of {list(COMMANDS)}")
        cfg.command = raw["command"]
    for key in ("kmax", "ks", "t", "lifetime", "method", "seed", "roots", "track_limit", "output"):
        if key in raw:
            setattr(cfg, key, raw[key])
    if cfg.kmax < 0:
        raise ConfigError("kmax: must be >= 0")
    if cfg.ks is not None and not all(isinstance(k, int) and k >= 1 for k in cfg.ks):
        raise ConfigError("ks: expected a list of integers >= 1")
    if cfg.method not in ("auto", "direct", "product", "quadrature2d"):
        raise ConfigError("method: expected auto, direct, product or quadrature2d")
    if "stop" in raw:
        _check_keys("stop", raw["stop"], _STOP)
        if not raw["stop"]:
            raise ConfigError("stop: at least one stop rule is required")
        cfg.stop = dict(raw["stop"])
    if "tolerances" in raw:
        _check_keys("tolerances", raw["tolerances"], _TOL)
        cfg.tolerances.update(raw["tolerances"])
    if "validate" in raw:
        _check_keys("validate", raw["validate"], _VALIDATE)
        cfg.validate = dict(raw["validate"])
    return cfg


# ---------------------------------------------------------------- commands


def _degree_distribution(cfg: RunConfig, alpha):
    spec, kmax = cfg.spec, cfg.kmax
    rtol = cfg.tolerances["rtol"]
    fd = spec.fitness
    if cfg.lifetime:
        return degree.lifetime_pk(spec, kmax)
    if cfg.t is not None:
        if isinstance(fd, GeneralExponential) and fd.shape == 1.0 and fd.h is None:
            return degree.expfit_cohort_pk(spec, cfg.t, kmax)
        return degree.occupancy(spec, cfg.t, kmax)
    if isinstance(spec.aging, ConstantAging):
        if fd.degenerate:
            return degree.stationary_pk(spec.weights, alpha, kmax)
        return degree.stationary_fitness_pk(spec.weights, fd, alpha, kmax)
    if fd.degenerate:
        method = {"quadrature2d": "direct"}.get(cfg.method, cfg.method)
        return degree.aging_pk(spec, alpha, kmax, method=method, rtol=rtol)
    exp_fit = isinstance(fd, GeneralExponential) and fd.shape == 1.0 and fd.h is None
    if exp_fit and cfg.method != "quadrature2d":
        return degree.expfit_pk(spec, alpha, kmax, rtol=rtol)
    return degree.aging_fitness_pk(spec, alpha, kmax, rtol=rtol)


def cmd_malthusian(cfg, out: Path, threads: int):
    verdict = malthus.supercriticality(cfg.spec)
    record = {"verdict": verdict.tag, "evidence": _jsonable(verdict.evidence)}
    if verdict.tag == "Supercritical":
        res = malthus.malthusian(cfg.spec)
        record.update(alpha_star=res.alpha_star, residual=res.residual, derivative=res.derivative_at_root,
                      alpha_tilde=res.alpha_tilde)
    (out / "malthusian.json").write_text(json.dumps(record, indent=2) + "\n")
    print(f"verdict: {verdict.tag}")
    if "alpha_star" in record:
        print(f"alpha_star: {record['alpha_star']:.17g}")
    if verdict.tag != "Supercritical":
        malthus.malthusian(cfg.spec)  # raises the typed refusal
    return EXIT_OK


def cmd_degdist(cfg, out: Path, threads: int):
    alpha = None
    if cfg.t is None and not cfg.lifetime:
        alpha = malthus.malthusian(cfg.spec).alpha_star
    dist = _degree_distribution(cfg, alpha)
    path = out / "degdist.csv"
    dist.to_csv(path)
    print(f"method: {dist.method}  kmax: {dist.kmax}  tail_mass: {dist.tail_mass:.3e}  -> {path}")
    return EXIT_OK


def cmd_asymptotics(cfg, out: Path, threads: int):
    alpha = malthus.malthusian(cfg.spec).alpha_star
    ks = cfg.ks or [10, 100, 1000]
    rows = asymptotics.write_saddle_csv(cfg.spec, ks, out / "saddle.csv", alpha, threads=threads)
    pred = asymptotics.predicted_tail(cfg.spec, alpha)
    (out / "tail_prediction.json").write_text(json.dumps(
        {"tail_class": pred.tail_class.tag, "exponent": pred.exponent, "correction": pred.correction}, indent=2) + "\n")
    print(f"{len(rows)} saddle rows -> {out / 'saddle.csv'}; tail: {pred.correction['form']}")
    return EXIT_OK


def cmd_simulate(cfg, out: Path, threads: int):
    pop = simulate.run(cfg.spec, seed=cfg.seed, roots=cfg.roots, track_limit=cfg.track_limit, **cfg.stop)
    pop.write_events(out / "events.csv")
    summary = simulate.summarize(pop)
    (out / "summary.json").write_text(summary.to_json() + "\n")
    print(f"size {summary.final_size}  time {summary.final_time:.6g}  stop {summary.stop_reason}  "
          f"explosion {summary.explosion_flag}")
    return EXIT_OK


def validation_checks(cfg: RunConfig):
    """Cross-module oracle comparisons for the configured spec; each entry
    is (name, residual, tolerance)."""
    spec = cfg.spec
    checks = []
    res = malthus.malthusian(spec)
    alpha = res.alpha_star
    checks.append(("malthusian_residual", abs(malthus.process_laplace(spec, alpha) - 1.0), 1e-9))
    kmax = min(cfg.kmax, 30)
    dist = _degree_distribution(RunConfig(spec, kmax=max(cfg.kmax, 30), tolerances=cfg.tolerances), alpha)
    checks.append(("normalization", dist.normalization_error, 1e-6))
    fd, ag = spec.fitness, spec.aging
    affine = spec.weights.affine_params() is not None
    if not isinstance(ag, ConstantAging) and fd.degenerate and affine:
        a = degree.aging_pk(spec, alpha, 20, method="direct")
        b = degree.aging_pk(spec, alpha, 20, method="product")
        checks.append(("aging_direct_vs_product", float(np.max(np.abs(a.probs - b.probs))), 1e-6))
    if isinstance(fd, GeneralExponential) and fd.shape == 1.0 and not isinstance(ag, ConstantAging) and affine:
        a = degree.expfit_pk(spec, alpha, 30)
        b = degree.aging_fitness_pk(spec, alpha, 30)
        checks.append(("expfit_1d_vs_2d", float(np.max(np.abs(a.probs - b.probs))), 1e-6))
    size = cfg.validate.get("population", 10**5)
    seed = cfg.validate.get("seed", cfg.seed)
    # a supercritical tree still dies out with positive probability; condition on survival
    for attempt in range(50):
        pop = simulate.run(spec, seed=seed + attempt, max_population=size)
        if pop.size >= size:
            break
    if pop.size >= size:
        rate = simulate.growth_rate(pop)
        checks.append(("growth_rate_relative", abs(rate - alpha) / alpha, 0.1))
        emp = simulate.empirical_pk(pop)
        n = min(kmax + 1, emp.probs.size)
        tv = 0.5 * (np.abs(emp.probs[:n] - dist.probs[:n]).sum() + dist.probs[n:kmax + 1].sum())
        checks.append(("simulation_tv", float(tv), 0.02))
    else:
        checks.append(("simulation_reached_size", float(size - pop.size), 0.0))
    return checks


def cmd_validate(cfg, out: Path, threads: int):
    checks = validation_checks(cfg)
    report = [{"check": n, "residual": r, "tolerance": t, "pass": bool(r <= t)} for n, r, t in checks]
    (out / "validate.json").write_text(json.dumps(report, indent=2) + "\n")
    for row in report:
        print(f"{'PASS' if row['pass'] else 'FAIL'}  {row['check']}: {row['residual']:.3e} (tol {row['tolerance']:.0e})")
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_VALIDATION


_DISPATCH = {
    "malthusian": cmd_malthusian, "degdist": cmd_degdist, "asymptotics": cmd_asymptotics,
    "simulate": cmd_simulate, "validate": cmd_validate,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    return obj


def run_command(cfg: RunConfig, command: str | None = None, out: str | Path = ".", threads: int = 1) -> int:
    command = command or cfg.command
    if command not in _DISPATCH:
        raise ConfigError(f"command: expected one of {list(COMMANDS)}")
    out = Path(cfg.output if cfg.output and out == "." else out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _DISPATCH[command](cfg, out, threads)
    except malthus.ExplosiveError as exc:
        print(f"explosive: {exc}", file=sys.stderr)
        return EXIT_EXPLOSIVE
    except malthus.SubcriticalError as exc:
        print(f"subcritical: {exc}", file=sys.stderr)
        return EXIT_SUBCRITICAL


def build_parser():
    parser = argparse.ArgumentParser(prog="agingpa", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--kmax", type=int, help="override the configured kmax")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for independent k-ranges")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(Path(args.config).read_text())
        if args.seed is not None:
            cfg.seed = args.seed
        if args.kmax is not None:
            if args.kmax < 0:
                raise ConfigError("--kmax: must be >= 0")
            cfg.kmax = args.kmax
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_command(cfg, args.command, args.out, args.threads)
    except Exception as exc:  # noqa: BLE001 - report and map to the generic failure code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
