"""Probabilistic maximum coverage for goods distribution (PMC-GD).

Each source ``u`` hands one indivisible good to at most one target, drawn
from the row ``p(u, .)``; rows may sum to less than one, the deficit being
the chance that nobody receives the good.  Rows are stored augmented with
that "null" column (index ``V``) so every base arm is a point of the
``(V + 1)``-simplex.  The null column never counts towards coverage.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .concentration import LogTerm, default_delta_l1
from .framework import (INFINITE_RADIUS, ArmStatistics, Environment, JointOracle, Proposal,
                        TriggeredObservation)

log = logging.getLogger(__name__)

ALPHA = 1.0 - 1.0 / math.e
MAX_BRUTE_FORCE_SOURCES = 15
SIMPLEX_TOL = 1e-9
AUDIT_TOL = 1e-9


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BipartiteInstance:
    """Complete bipartite graph with edge matrix ``probs[u, v]`` and budget ``k``."""

    probs: np.ndarray
    k: int

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2:
            raise ValueError(f"edge matrix must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if np.any(p.sum(axis=1) > 1.0 + SIMPLEX_TOL):
            raise ValueError("each source's edge probabilities must sum to at most 1")
        if not 0 <= self.k <= p.shape[0]:
            raise ValueError(f"budget k={self.k} must be in [0, {p.shape[0]}]")

    @property
    def U(self) -> int:
        return self.probs.shape[0]

    @property
    def V(self) -> int:
        return self.probs.shape[1]

    @property
    def augmented(self) -> np.ndarray:
        null = np.clip(1.0 - self.probs.sum(axis=1), 0.0, 1.0)
        return np.column_stack([self.probs, null])


def validate_seed_set(seeds, U: int, k: int) -> tuple:
    seeds = tuple(int(u) for u in seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"seed set has repeated sources: {seeds}")
    if len(seeds) > k:
        raise ValueError(f"seed set {seeds} exceeds budget k={k}")
    if any(not 0 <= u < U for u in seeds):
        raise ValueError(f"seed set {seeds} has sources outside [0, {U})")
    return seeds


def coverage_reward(instance: BipartiteInstance, seeds, p=None) -> float:
    """Expected number of covered targets, ``sum_v 1 - prod_{u in seeds} (1 - p(u, v))``.

    ``p`` defaults to the instance's own edge matrix; augmented matrices are
    accepted and their null column ignored.
    """
    p = instance.probs if p is None else np.asarray(p, dtype=float)
    seeds = list(seeds)
    if not seeds:
        return 0.0
    rows = p[seeds, :instance.V]
    return float(np.sum(1.0 - np.prod(1.0 - rows, axis=0)))


def sample_round(instance: BipartiteInstance, seeds, rng: np.random.Generator,
                 cdf=None) -> list:
    """One multinoulli draw per selected source, in increasing source order.

    Each outcome has length ``V + 1``: one-hot on the receiving target, or
    one-hot on the null slot (all-zero over ``V``) if nobody receives.
    """
    seeds = sorted(seeds)
    if cdf is None:
        cdf = np.cumsum(instance.augmented, axis=1)
    u = rng.random(len(seeds))
    eye = np.eye(instance.V + 1)
    obs = []
    for src, x in zip(seeds, u):
        idx = min(int(np.searchsorted(cdf[src], x, side="right")), instance.V)
        obs.append(TriggeredObservation(src, eye[idx]))
    return obs


def max_l1_deviation(p_hat_row, phi: float):
    """Farthest point of the simplex from ``p_hat_row`` within L1 radius ``phi``.

    The largest reachable distance is ``2 (1 - min entry)``; it is reached by
    piling mass onto the smallest entry (lowest index among ties), taken from
    the other entries in ascending order.  Returns ``(p_tilde, distance)``.
    """
    p = np.asarray(p_hat_row, dtype=float)
    if not phi >= 0:
        raise ValueError("radius must be non-negative")
    target = int(np.argmin(p))
    q = 2.0 * (1.0 - p[target])
    if math.isinf(phi):
        out = np.zeros_like(p)
        out[target] = 1.0
        return out, q
    q = min(phi, q)
    move = q / 2.0
    out = p.copy()
    donors = [i for i in np.argsort(p, kind="stable") if i != target]
    left = move
    for i in donors:
        if left <= 0:
            break
        take = min(out[i], left)
        out[i] -= take
        left -= take
    out[target] += move - left
    return out, q


# --------------------------------------------------------------------------
# greedy maximisation


def greedy_max(objective: Callable[[tuple], float], n: int, k: int, lazy: bool = True) -> tuple:
    """Greedy maximisation of a monotone set function over ``range(n)``.

    Adds the element with the largest marginal gain ``k`` times (ties go to
    the lowest index).  ``lazy`` keeps stale gains in a heap and only
    re-evaluates the top; for submodular objectives it picks the same
    elements as the plain scan.
    """
    k = min(k, n)
    chosen: list = []
    base = objective(())
    if not lazy:
        for _ in range(k):
            best, best_gain = -1, -math.inf
            for e in range(n):
                if e in chosen:
                    continue
                gain = objective(tuple(chosen + [e])) - base
                if gain > best_gain:
                    best, best_gain = e, gain
            chosen.append(best)
            base += best_gain
        return tuple(sorted(chosen))

    heap = [(-(objective((e,)) - base), e) for e in range(n)]
    heapq.heapify(heap)
    while len(chosen) < k:
        _, e = heapq.heappop(heap)
        fresh = objective(tuple(chosen + [e])) - base
        if not heap or (-fresh, e) <= heap[0]:
            chosen.append(e)
            base += fresh
        else:
            heapq.heappush(heap, (-fresh, e))
    return tuple(sorted(chosen))


def brute_force_best(instance: BipartiteInstance, k: int | None = None, p=None):
    """Exact best seed set of size at most ``k`` by enumeration.

    Ties go to the lexicographically smallest set.  Refuses instances with
    more than ``MAX_BRUTE_FORCE_SOURCES`` sources.
    """
    k = instance.k if k is None else k
    if instance.U > MAX_BRUTE_FORCE_SOURCES:
        raise InstanceTooLargeError(
            f"brute force over {instance.U} sources refused (limit {MAX_BRUTE_FORCE_SOURCES})")
    best, best_val = (), -math.inf
    for c in sorted(seed_sets(instance.U, k)):
        val = coverage_reward(instance, c, p)
        if val > best_val:
            best, best_val = c, val
    return best, best_val


# --------------------------------------------------------------------------
# joint oracle and baselines


class PmcGdProposal(NamedTuple):
    seeds: tuple
    p_tilde: np.ndarray
    bonus: np.ndarray
    radius: np.ndarray
    pseudo_value: float


def pmc_radius(counts: np.ndarray, U: int, V: int, T: int, delta: float | None = None):
    """Per-source L1 radius; the Weissman dimension counts the null slot."""
    delta = default_delta_l1(T) if delta is None else delta
    L = LogTerm.union_bound(U * V * T, delta).value
    radius = np.full(counts.shape, INFINITE_RADIUS)
    seen = counts > 0
    radius[seen] = np.sqrt(2.0 * (V + 1) * L / counts[seen])
    return radius


def pmc_gd_joint_oracle(stats: ArmStatistics, k: int, T: int, delta: float | None = None,
                        lazy: bool = True) -> PmcGdProposal:
    """Greedy maximisation of the pseudo-reward
    ``r(pi; p_hat) + sum_{u in pi} max L1 deviation of row u``."""
    U, V = stats.m, stats.d - 1
    p_hat = stats.means
    radius = pmc_radius(stats.counters, U, V, T, delta)
    p_tilde = np.empty_like(p_hat)
    bonus = np.empty(U)
    for u in range(U):
        p_tilde[u], bonus[u] = max_l1_deviation(p_hat[u], radius[u])
    edges = p_hat[:, :V]

    def pseudo(seeds):
        if not seeds:
            return 0.0
        idx = list(seeds)
        return float(np.sum(1.0 - np.prod(1.0 - edges[idx], axis=0)) + bonus[idx].sum())

    seeds = greedy_max(pseudo, U, k, lazy=lazy)
    return PmcGdProposal(seeds, p_tilde, bonus, radius, pseudo(seeds))


def edge_ucb(stats: ArmStatistics, t: int) -> np.ndarray:
    """Per-edge Bernoulli UCB ``min(mu_hat + sqrt(1.5 log t / N), 1)``; 1 when ``N = 0``."""
    V = stats.d - 1
    n = stats.counters.astype(float)
    ucb = np.ones((stats.m, V))
    seen = n > 0
    width = np.sqrt(1.5 * math.log(t) / n[seen])
    ucb[seen] = np.minimum(stats.means[seen, :V] + width[:, None], 1.0)
    return ucb


def per_dimension_baseline(stats: ArmStatistics, k: int, t: int, lazy: bool = True) -> tuple:
    """Greedy seed set on per-edge UCBs, every ``(u, v)`` treated as its own arm."""
    ucb = edge_ucb(stats, t)

    def objective(seeds):
        if not seeds:
            return 0.0
        return float(np.sum(1.0 - np.prod(1.0 - ucb[list(seeds)], axis=0)))

    return greedy_max(objective, stats.m, k, lazy=lazy)


class PmcGreedyOracle(JointOracle):
    kind = "pmc-greedy"

    def __init__(self, U: int, V: int, k: int, T: int, delta: float | None = None,
                 lazy: bool = True):
        self.m, self.d = U, V + 1
        self.k, self.T, self.delta, self.lazy = k, T, delta, lazy

    def propose(self, stats, t):
        res = pmc_gd_joint_oracle(stats, self.k, self.T, self.delta, self.lazy)
        return Proposal(res.seeds, res.p_tilde,
                        {"kind": self.kind, "radius": res.radius,
                         "optimistic_value": res.pseudo_value})


class PerDimensionBaselineOracle(JointOracle):
    kind = "baseline-per-dimension"

    def __init__(self, U: int, V: int, k: int, lazy: bool = True):
        self.m, self.d = U, V + 1
        self.k, self.lazy = k, lazy

    def propose(self, stats, t):
        ucb = edge_ucb(stats, t)
        seeds = per_dimension_baseline(stats, self.k, t, self.lazy)
        value = float(np.sum(1.0 - np.prod(1.0 - ucb[list(seeds)], axis=0))) if seeds else 0.0
        return Proposal(seeds, ucb, {"kind": self.kind, "ucb": ucb, "optimistic_value": value})


class WarmStartOracle(JointOracle):
    """Plays every never-observed source alone (lowest index first) before
    handing control to ``inner``; takes exactly ``U`` rounds on PMC-GD."""

    def __init__(self, inner: JointOracle):
        self.inner = inner
        self.m, self.d = inner.m, inner.d

    def propose(self, stats, t):
        unseen = np.flatnonzero(stats.counters == 0)
        if unseen.size:
            return Proposal((int(unseen[0]),), stats.means.copy(), {"kind": "warm-start"})
        return self.inner.propose(stats, t)


class PmcGdEnvironment(Environment):
    alpha = ALPHA

    def __init__(self, instance: BipartiteInstance):
        self.instance = instance
        self.m, self.d = instance.U, instance.V + 1
        self._aug = instance.augmented
        self._cdf = np.cumsum(self._aug, axis=1)
        if instance.U <= MAX_BRUTE_FORCE_SOURCES:
            self.best_seeds, self._opt = brute_force_best(instance)
        else:
            log.warning("%d sources: using the greedy value as the benchmark", instance.U)
            self.best_seeds = greedy_max(lambda s: coverage_reward(instance, s),
                                         instance.U, instance.k)
            self._opt = coverage_reward(instance, self.best_seeds)
        self._cache: dict = {}

    @property
    def optimal_value(self) -> float:
        return self._opt

    def is_feasible(self, action) -> bool:
        try:
            validate_seed_set(action, self.instance.U, self.instance.k)
        except (ValueError, TypeError):
            return False
        return True

    def action_id(self, action) -> str:
        return ";".join(str(u) for u in sorted(action))

    def sample_round(self, action, rng):
        obs = sample_round(self.instance, action, rng, cdf=self._cdf)
        covered = np.zeros(self.instance.V + 1, dtype=bool)
        for o in obs:
            covered |= o.outcome > 0
        return obs, float(covered[:self.instance.V].sum())

    def exact_expected_reward(self, action) -> float:
        key = tuple(sorted(action))
        val = self._cache.get(key)
        if val is None:
            val = self._cache[key] = coverage_reward(self.instance, key)
        return val

    def audit(self, stats, proposal, t):
        diag = proposal.diagnostics
        kind = diag.get("kind")
        if kind in (None, "warm-start"):
            return None, None
        seen = stats.counters > 0
        if kind == PmcGreedyOracle.kind:
            dev = np.abs(stats.means - self._aug).sum(axis=1)
            truth_in = bool(np.all(dev[seen] <= diag["radius"][seen]))
        else:
            truth_in = bool(np.all(self.instance.probs <= diag["ucb"] + AUDIT_TOL))
        optimism = bool(diag["optimistic_value"] >= self.alpha * self._opt - AUDIT_TOL)
        return optimism, truth_in


# --------------------------------------------------------------------------
# instances


def random_instance(U: int, V: int, k: int, seed: int) -> BipartiteInstance:
    """Uniform-Dirichlet rows over ``V`` targets plus the null slot."""
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.ones(V + 1), size=U)
    return BipartiteInstance(rows[:, :V], k)


def write_instance(instance: BipartiteInstance, path) -> None:
    lines = [f"{instance.U} {instance.V} {instance.k}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in instance.probs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path) -> BipartiteInstance:
    """Header ``U V k`` then ``U`` rows of ``V`` edge probabilities; the null
    mass of each row is implied as its deficit from 1."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if len(tokens) < 3:
        raise ValueError(f"{path}: missing 'U V k' header")
    U, V, k = (int(x) for x in tokens[:3])
    body = np.array([float(x) for x in tokens[3:]])
    if body.size != U * V:
        raise ValueError(f"{path}: expected {U * V} edge probabilities, found {body.size}")
    return BipartiteInstance(body.reshape(U, V), k)


def is_modular(instance: BipartiteInstance) -> bool:
    """True when no two sources share a target (coverage is then additive)."""
    return bool(np.all((instance.probs > 0).sum(axis=0) <= 1))


def seed_sets(U: int, k: int) -> Sequence[tuple]:
    return [c for r in range(k + 1) for c in itertools.combinations(range(U), r)]
