"""Confidence radii and their Monte-Carlo coverage audits.

Radius functions are learner-plane and never see the true parameter (except
``bernstein_entry_radius``, which needs the true entry and is only used by
audits).  The ``*_coverage`` functions at the bottom are test-plane: they
sample from a known distribution and report how often a radius is violated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .framework import INFINITE_RADIUS

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class LogTerm:
    """The log factor ``L`` shared by the radii of one round."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"log term must be non-negative, got {self.value}")

    def __float__(self):
        return float(self.value)

    @classmethod
    def union_bound(cls, n_events: float, delta: float) -> "LogTerm":
        """``log(n_events / delta)``, e.g. ``log(SAHT / delta')``."""
        return cls(max(math.log(n_events / delta), 0.0))


def default_delta_l1(T: int) -> float:
    return 1.0 / (2 * T)


def default_delta_variance(T: int) -> float:
    return 1.0 / (8 * T)


def l1_multinoulli_radius(d: int, n: int, log2_over_delta: float) -> float:
    """Weissman-type L1 radius ``sqrt(2 d L / n)`` for an empirical categorical."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if n <= 0:
        return INFINITE_RADIUS
    return math.sqrt(2.0 * d * float(log2_over_delta) / n)


def bernstein_entry_radius(p_entry: float, n: int, log_term: float) -> float:
    if not 0.0 <= p_entry <= 1.0:
        raise ValueError(f"p_entry must lie in [0, 1], got {p_entry}")
    if n <= 0:
        return INFINITE_RADIUS
    L = float(log_term)
    return math.sqrt(p_entry * (1.0 - p_entry) * L / n) + L / n


def _check_simplex(dist: np.ndarray):
    if np.any(dist < -SIMPLEX_TOL) or abs(dist.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"not a probability vector: {dist}")


def empirical_variance(dist, values) -> float:
    """``E[v^2] - E[v]^2`` under ``dist``, clamped at zero."""
    dist = np.asarray(dist, dtype=float)
    values = np.asarray(values, dtype=float)
    _check_simplex(dist)
    mean = dist @ values
    var = dist @ (values * values) - mean * mean
    return max(var, 0.0)


def variance_aware_bonus(p_hat, v_upper, v_lower, n: int, L, H: float) -> float:
    """Three-term bonus from the empirical variance of the optimistic values,
    the optimistic/pessimistic gap and a ``5 H L / n`` correction."""
    if n <= 0:
        return INFINITE_RADIUS
    p_hat = np.asarray(p_hat, dtype=float)
    v_upper = np.asarray(v_upper, dtype=float)
    v_lower = np.asarray(v_lower, dtype=float)
    if np.any(v_lower > v_upper + 1e-12):
        raise ValueError("v_lower must not exceed v_upper")
    L = float(L)
    var = empirical_variance(p_hat, v_upper)
    gap2 = p_hat @ (v_upper - v_lower) ** 2
    return 2.0 * math.sqrt(var * L / n) + 2.0 * math.sqrt(max(gap2, 0.0) * L / n) + 5.0 * H * L / n


def variance_aware_bonus_rows(p_hat: np.ndarray, v_upper: np.ndarray, v_lower: np.ndarray,
                              counts: np.ndarray, L: float, H: float) -> np.ndarray:
    """Row-wise ``variance_aware_bonus`` for a stack of empirical rows.

    ``p_hat`` has shape ``(k, S)``; rows with a zero count get an infinite
    bonus whatever their (all-zero) empirical row is.
    """
    mean = p_hat @ v_upper
    var = np.maximum(p_hat @ (v_upper * v_upper) - mean * mean, 0.0)
    gap2 = np.maximum(p_hat @ (v_upper - v_lower) ** 2, 0.0)
    bonus = np.full(counts.shape, INFINITE_RADIUS)
    seen = counts > 0
    n = counts[seen]
    bonus[seen] = (2.0 * np.sqrt(var[seen] * L / n) + 2.0 * np.sqrt(gap2[seen] * L / n)
                   + 5.0 * H * L / n)
    return bonus


# --------------------------------------------------------------------------
# test-plane coverage audits


@dataclass(frozen=True)
class CoverageResult:
    name: str
    trials: int
    violations: int
    delta: float

    @property
    def rate(self) -> float:
        return self.violations / self.trials

    @property
    def threshold(self) -> float:
        """Nominal delta plus two binomial standard errors."""
        se = math.sqrt(self.delta * (1.0 - self.delta) / self.trials)
        return self.delta + 2.0 * se

    @property
    def passed(self) -> bool:
        return self.rate <= self.threshold


def _empirical_rows(p: np.ndarray, n: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    return rng.multinomial(n, p, size=trials) / n


def l1_coverage(p, n: int, delta: float, trials: int = 10_000, seed: int = 0) -> CoverageResult:
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    radius = l1_multinoulli_radius(len(p), n, math.log(2.0 / delta))
    dev = np.abs(_empirical_rows(p, n, trials, rng) - p).sum(axis=1)
    return CoverageResult("weissman-l1", trials, int((dev > radius).sum()), delta)


def bernstein_coverage(p_entry: float, n: int, delta: float, trials: int = 10_000,
                       seed: int = 0) -> CoverageResult:
    rng = np.random.default_rng(seed)
    radius = bernstein_entry_radius(p_entry, n, math.log(2.0 / delta))
    dev = np.abs(rng.binomial(n, p_entry, size=trials) / n - p_entry)
    return CoverageResult("bernstein-entry", trials, int((dev > radius).sum()), delta)


def future_value_coverage(p, v_star, n: int, H: float, delta: float, trials: int = 10_000,
                          seed: int = 0) -> CoverageResult:
    """Violation rate of ``|(p_hat - p)^T V*| <= bonus(p_hat, V*, V*)``.

    With the true future value on both sides the optimistic/pessimistic gap
    term vanishes and the bonus reduces to the empirical-Bernstein part.
    """
    p = np.asarray(p, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    rng = np.random.default_rng(seed)
    L = math.log(2.0 / delta)
    p_hat = _empirical_rows(p, n, trials, rng)
    dev = np.abs((p_hat - p) @ v_star)
    bonus = variance_aware_bonus_rows(p_hat, v_star, v_star, np.full(trials, n), L, H)
    return CoverageResult("variance-aware", trials, int((dev > bonus).sum()), delta)
