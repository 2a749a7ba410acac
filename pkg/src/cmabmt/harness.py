"""Experiment orchestration: configuration, replications, regret curves, CSV output.

Config files are INI-style with a single ``[experiment]`` section::

    [experiment]
    env = episodic-rl          ; or pmc-gd
    generator = 3,2,3          ; (S,A,H) or (U,V,k); ignored if instance_file is set
    instance_seed = 15
    instance_file =            ; optional path to an instance file
    oracle = optimistic-vi     ; extended-vi | optimistic-vi | pmc-greedy | baseline-per-dimension
    T = 20000
    replications = 8
    seed = 1
    delta =                    ; optional override of delta'
    output = runs/demo
    jobs = 1
    audit = true
    warm_start = true          ; PMC-GD only: play every source once first
    lazy_greedy = true

Precedence is CLI flags > ``CMABMT_SEED`` (seed only) > file > defaults.

Instance files
--------------
MDP: first line ``S A H s1``; then ``H*S`` lines of ``A`` mean rewards, ordered
by step then state; then ``H*S*A`` lines of ``S`` transition probabilities,
ordered by step, state, action.  PMC-GD: first line ``U V k``; then ``U``
lines of ``V`` edge probabilities (the null mass is the row's deficit from 1).
Numbers are whitespace separated; ``#`` starts a comment.

Output files
------------
``replication_NNN.csv`` with columns
``round,instant_regret,cum_regret,optimism_held,truth_in_region`` (flags are
``1``/``0``, empty when not audited), ``summary.csv`` with
``round,mean_cum,stderr_cum`` and ``audit.json`` with per-replication flag
counts.  Floats are written with 17 significant digits so they read back
exactly.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .episodic import (EpisodicEnvironment, ExtendedVIOracle, OptimisticVIOracle, random_mdp,
                       read_mdp)
from .framework import Trace, run_cucb_mt
from .pmcgd import (PerDimensionBaselineOracle, PmcGdEnvironment, PmcGreedyOracle,
                    WarmStartOracle, random_instance, read_instance)

log = logging.getLogger(__name__)

ENV_KINDS = ("episodic-rl", "pmc-gd")
ORACLES = {
    "episodic-rl": ("extended-vi", "optimistic-vi"),
    "pmc-gd": ("pmc-greedy", "baseline-per-dimension"),
}
CURVE_COLUMNS = ["round", "instant_regret", "cum_regret", "optimism_held", "truth_in_region"]
SUMMARY_COLUMNS = ["round", "mean_cum", "stderr_cum"]
UNDEFINED_SLOPE = math.nan


class ConfigError(ValueError):
    pass


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_triple(value) -> tuple:
    if isinstance(value, (tuple, list)):
        parts = list(value)
    else:
        parts = str(value).replace("(", "").replace(")", "").replace("x", ",").split(",")
    try:
        triple = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"generator spec must be three integers, got {value!r}") from None
    if len(triple) != 3 or min(triple) < 0:
        raise ConfigError(f"generator spec must be three non-negative integers, got {value!r}")
    return triple


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "episodic-rl"
    oracle: str = "optimistic-vi"
    generator: tuple = (3, 2, 3)
    instance_seed: int = 0
    instance_file: str | None = None
    T: int = 1000
    replications: int = 1
    seed: int = 0
    delta: float | None = None
    output: str = "runs"
    jobs: int = 1
    audit: bool = True
    warm_start: bool = True
    lazy_greedy: bool = True

    def __post_init__(self):
        if self.env not in ENV_KINDS:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {ENV_KINDS}")
        if self.oracle not in ORACLES[self.env]:
            raise ConfigError(f"oracle {self.oracle!r} is incompatible with env {self.env!r}; "
                              f"expected one of {ORACLES[self.env]}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **coerce_fields(kw))


_CONVERTERS = {
    "T": int, "replications": int, "seed": int, "instance_seed": int, "jobs": int,
    "delta": lambda v: None if v in (None, "", "none", "None") else float(v),
    "audit": _parse_bool, "warm_start": _parse_bool, "lazy_greedy": _parse_bool,
    "generator": _parse_triple,
    "instance_file": lambda v: None if v in (None, "") else str(v),
    "env": str, "oracle": str, "output": str,
}


def coerce_fields(raw: dict) -> dict:
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = _CONVERTERS[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the file, then ``CMABMT_SEED``, then ``overrides``."""
    environ = os.environ if environ is None else environ
    raw: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        if parser.has_section("experiment"):
            raw.update(dict(parser.items("experiment")))
        elif parser.sections():
            raise ConfigError(f"{path}: expected an [experiment] section")
    if environ.get("CMABMT_SEED"):
        raw["seed"] = environ["CMABMT_SEED"]
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(**coerce_fields(raw))


# --------------------------------------------------------------------------
# building blocks


def build_environment(config: ExperimentConfig):
    try:
        if config.env == "episodic-rl":
            if config.instance_file:
                mdp = read_mdp(config.instance_file)
            else:
                S, A, H = config.generator
                mdp = random_mdp(S, A, H, config.instance_seed)
            return EpisodicEnvironment(mdp)
        if config.instance_file:
            inst = read_instance(config.instance_file)
        else:
            U, V, k = config.generator
            inst = random_instance(U, V, k, config.instance_seed)
        return PmcGdEnvironment(inst)
    except OSError as exc:
        raise ConfigError(f"cannot read instance file: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid instance: {exc}") from None


def build_oracle(config: ExperimentConfig, env):
    if config.oracle == "extended-vi":
        return ExtendedVIOracle(env.mdp.rewards, config.T, config.delta)
    if config.oracle == "optimistic-vi":
        return OptimisticVIOracle(env.mdp.rewards, config.T, config.delta)
    inst = env.instance
    if config.oracle == "pmc-greedy":
        oracle = PmcGreedyOracle(inst.U, inst.V, inst.k, config.T, config.delta,
                                 config.lazy_greedy)
    else:
        oracle = PerDimensionBaselineOracle(inst.U, inst.V, inst.k, config.lazy_greedy)
    return WarmStartOracle(oracle) if config.warm_start else oracle


def replication_seed(config: ExperimentConfig, index: int) -> int:
    return (config.seed + index) % 2**64


def run_replication(config: ExperimentConfig, index: int, env=None) -> Trace:
    env = build_environment(config) if env is None else env
    oracle = build_oracle(config, env)
    return run_cucb_mt(env, oracle, config.T, replication_seed(config, index),
                       audit=config.audit, keep_observations=False)


def _replication_rows(config: ExperimentConfig, index: int):
    """Worker body: returns plain columns so results pickle cheaply."""
    trace = run_replication(config, index)
    return (trace.instant_regret, trace.cum_regret,
            [r.optimism_held for r in trace], [r.truth_in_region for r in trace])


# --------------------------------------------------------------------------
# curves and CSV


@dataclass
class RegretCurve:
    """Cumulative regret per replication, shape ``(replications, T)``."""

    cum: np.ndarray
    instant: np.ndarray
    optimism: list = field(default_factory=list)
    truth: list = field(default_factory=list)

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.cum.shape[1] + 1)

    @property
    def mean(self) -> np.ndarray:
        return self.cum.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        n = self.cum.shape[0]
        if n < 2:
            return np.zeros(self.cum.shape[1])
        return self.cum.std(axis=0, ddof=1) / math.sqrt(n)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _flag(x) -> str:
    return "" if x is None else str(int(bool(x)))


def write_curve_csv(path, instant, cum, optimism=None, truth=None) -> None:
    T = len(cum)
    optimism = optimism if optimism is not None else [None] * T
    truth = truth if truth is not None else [None] * T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for t in range(T):
            w.writerow([t + 1, _fmt(instant[t]), _fmt(cum[t]), _flag(optimism[t]),
                        _flag(truth[t])])


def read_curve_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))

    def flag(v):
        return None if v == "" else bool(int(v))

    return {
        "round": np.array([int(r["round"]) for r in rows]),
        "instant_regret": np.array([float(r["instant_regret"]) for r in rows]),
        "cum_regret": np.array([float(r["cum_regret"]) for r in rows]),
        "optimism_held": [flag(r["optimism_held"]) for r in rows],
        "truth_in_region": [flag(r["truth_in_region"]) for r in rows],
    }


def write_summary_csv(path, curve: RegretCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for t, m, se in zip(curve.rounds, curve.mean, curve.stderr):
            w.writerow([int(t), _fmt(m), _fmt(se)])


def read_summary_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in SUMMARY_COLUMNS}


def audit_report(curve: RegretCurve) -> dict:
    reps = []
    for i, (opt, truth) in enumerate(zip(curve.optimism, curve.truth)):
        audited = [(o, t) for o, t in zip(opt, truth) if o is not None]
        reps.append({
            "replication": i,
            "audited_rounds": len(audited),
            "optimism_violations": sum(1 for o, _ in audited if not o),
            "truth_outside_region": sum(1 for _, t in audited if t is False),
            "optimism_violations_with_truth_in_region":
                sum(1 for o, t in audited if t and not o),
        })
    return {"replications": reps}


def run_experiment(config: ExperimentConfig, write: bool = True) -> RegretCurve:
    """Run all replications (in parallel up to ``config.jobs``) and write outputs."""
    build_environment(config)  # fail fast on a bad instance before forking
    indices = range(config.replications)
    if config.jobs > 1 and config.replications > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_replication_rows, [config] * config.replications, indices))
    else:
        results = [_replication_rows(config, i) for i in indices]
    curve = RegretCurve(cum=np.array([r[1] for r in results]),
                        instant=np.array([r[0] for r in results]),
                        optimism=[r[2] for r in results], truth=[r[3] for r in results])
    if write:
        out = Path(config.output)
        out.mkdir(parents=True, exist_ok=True)
        for i, (inst, cum, opt, truth) in enumerate(results):
            write_curve_csv(out / f"replication_{i:03d}.csv", inst, cum, opt, truth)
        write_summary_csv(out / "summary.csv", curve)
        (out / "audit.json").write_text(json.dumps(audit_report(curve), indent=2) + "\n")
        log.info("wrote %d replication curves to %s", config.replications, out)
    return curve


def summarize_slope(curve, window) -> float:
    """Least-squares slope of log cumulative regret against log round on ``window``.

    ``curve`` is a :class:`RegretCurve` (its mean is used) or a 1-D array of
    cumulative regret indexed from round 1.  Returns ``UNDEFINED_SLOPE`` if
    the regret is zero on the whole window.
    """
    cum = curve.mean if isinstance(curve, RegretCurve) else np.asarray(curve, dtype=float)
    t0, t1 = window
    if t0 < 2 or t1 <= t0 or t1 > len(cum):
        raise ValueError(f"window {window} invalid for a curve of length {len(cum)}")
    seg = cum[t0 - 1:t1]
    if np.all(seg == 0):
        return UNDEFINED_SLOPE
    if np.any(seg <= 0):
        raise ValueError("cumulative regret must be positive on the window")
    t = np.arange(t0, t1 + 1, dtype=float)
    slope, _ = np.polyfit(np.log(t), np.log(seg), 1)
    return float(slope)


def run_sweep(config: ExperimentConfig, param: str, values: list) -> list:
    """One experiment per value of ``param``; each goes to ``output/param=value``."""
    rows = []
    for value in values:
        cfg = config.with_overrides(**{param: value},
                                    output=str(Path(config.output) / f"{param}={value}"))
        curve = run_experiment(cfg)
        rows.append({"value": value, "T": cfg.T, "final_mean_cum": float(curve.mean[-1]),
                     "final_stderr_cum": float(curve.stderr[-1])})
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([param, "T", "final_mean_cum", "final_stderr_cum"])
        for r in rows:
            w.writerow([r["value"], r["T"], _fmt(r["final_mean_cum"]),
                        _fmt(r["final_stderr_cum"])])
    return rows
