"""Tabular episodic RL as a CMAB-MT instance.

Every ``(s, a, h)`` triple is a base arm whose ``S``-dimensional outcome is
the one-hot next state; a deterministic policy is the combinatorial action
and its occupancy measure is the triggering probability.

Array conventions (steps are 0-based, ``h = 0 .. H-1``):

* transitions ``P[h, s, a, s']``
* rewards ``R[h, s, a]``
* policies ``pi[h, s]``
* value tables ``V[h, s]`` with ``H + 1`` rows, the last one all zero
* occupancy ``q[h, s, a]``

Arm ``(s, a, h)`` has flat index ``(h * S + s) * A + a`` so that an
``ArmStatistics`` reshapes directly to ``(H, S, A, ...)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .concentration import (LogTerm, default_delta_l1, default_delta_variance,
                            variance_aware_bonus_rows)
from .framework import (INFINITE_RADIUS, ArmStatistics, Environment, JointOracle, Proposal,
                        TriggeredObservation)

SIMPLEX_TOL = 1e-9
AUDIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ValueError(f"transitions must have shape (H, S, A, S), got {P.shape}")
        if R.shape != P.shape[:3]:
            raise ValueError(f"rewards must have shape {P.shape[:3]}, got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("every transition row must be a probability vector")
        if np.any(R < 0) or np.any(R > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0 <= self.initial_state < P.shape[1]:
            raise ValueError(f"initial state {self.initial_state} out of range")

    @property
    def H(self) -> int:
        return self.transitions.shape[0]

    @property
    def S(self) -> int:
        return self.transitions.shape[1]

    @property
    def A(self) -> int:
        return self.transitions.shape[2]

    def with_transitions(self, transitions) -> "TabularMdp":
        return TabularMdp(transitions, self.rewards, self.initial_state)

    def arm_index(self, s: int, a: int, h: int) -> int:
        return (h * self.S + s) * self.A + a


def validate_policy(mdp: TabularMdp, pi) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.H, mdp.S):
        raise ValueError(f"policy must have shape {(mdp.H, mdp.S)}, got {pi.shape}")
    if not np.issubdtype(pi.dtype, np.integer) or np.any(pi < 0) or np.any(pi >= mdp.A):
        raise ValueError("policy entries must be action indices in [0, A)")
    return pi


def _evaluate(P: np.ndarray, R: np.ndarray, pi: np.ndarray) -> np.ndarray:
    H, S = pi.shape
    V = np.zeros((H + 1, S))
    states = np.arange(S)
    for h in range(H - 1, -1, -1):
        a = pi[h]
        V[h] = R[h, states, a] + P[h, states, a] @ V[h + 1]
    return V


def value_of_policy(mdp: TabularMdp, pi) -> np.ndarray:
    """Backward Bellman recursion for a fixed deterministic policy."""
    pi = validate_policy(mdp, pi)
    return _evaluate(mdp.transitions, mdp.rewards, pi)


def q_values(mdp: TabularMdp, V: np.ndarray) -> np.ndarray:
    """``Q[h, s, a] = r(s, a, h) + p(s, a, h)^T V[h + 1]``."""
    return mdp.rewards + np.einsum("hsaj,hj->hsa", mdp.transitions, V[1:])


def optimal_values(mdp: TabularMdp):
    """Backward induction; returns ``(V*, greedy policy)`` (ties -> lowest action)."""
    H, S = mdp.H, mdp.S
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q = mdp.rewards[h] + mdp.transitions[h] @ V[h + 1]
        pi[h] = np.argmax(Q, axis=1)
        V[h] = Q[np.arange(S), pi[h]]
    return V, pi


def occupancy_measure(mdp: TabularMdp, pi, transitions=None) -> np.ndarray:
    """Forward recursion for ``q[h, s, a]`` starting from the initial state."""
    pi = validate_policy(mdp, pi)
    P = mdp.transitions if transitions is None else np.asarray(transitions)
    H, S, A = mdp.H, mdp.S, mdp.A
    states = np.arange(S)
    q = np.zeros((H, S, A))
    d = np.zeros(S)
    d[mdp.initial_state] = 1.0
    for h in range(H):
        q[h, states, pi[h]] = d
        if h + 1 < H:
            d = d @ P[h, states, pi[h]]
    return q


class Episode(NamedTuple):
    observations: list
    rewards: np.ndarray
    states: np.ndarray
    actions: np.ndarray


def sample_episode(mdp: TabularMdp, pi, rng: np.random.Generator, cdf=None) -> Episode:
    """Roll out one episode.

    Step ``h`` consumes two uniforms: the first decides the Bernoulli reward,
    the second the next state by inverse CDF.  The observation for arm
    ``(s_h, a_h, h)`` is the one-hot next-state vector.
    """
    pi = np.asarray(pi)
    H, S = mdp.H, mdp.S
    if cdf is None:
        cdf = np.cumsum(mdp.transitions, axis=-1)
    u = rng.random((H, 2))
    obs = []
    rewards = np.zeros(H)
    states = np.zeros(H + 1, dtype=np.int64)
    actions = np.zeros(H, dtype=np.int64)
    s = mdp.initial_state
    eye = np.eye(S)
    for h in range(H):
        a = int(pi[h, s])
        states[h], actions[h] = s, a
        rewards[h] = float(u[h, 0] < mdp.rewards[h, s, a])
        nxt = min(int(np.searchsorted(cdf[h, s, a], u[h, 1], side="right")), S - 1)
        obs.append(TriggeredObservation(mdp.arm_index(s, a, h), eye[nxt]))
        s = nxt
    states[H] = s
    return Episode(obs, rewards, states, actions)


# --------------------------------------------------------------------------
# L1-ball inner maximisation


def inner_l1_max_rows(p_hat: np.ndarray, values: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Row-wise ``argmax { p^T values : p in simplex, |p - p_hat|_1 <= phi }``.

    Mass ``min(phi/2, 1 - p_hat[best])`` is moved onto the highest-value state
    (lowest index among ties) and taken from the other states in ascending
    value order.  Rows with an infinite radius become the one-hot on the best
    state whatever ``p_hat`` is (this covers the all-zero rows of unvisited
    arms).
    """
    p_hat = np.atleast_2d(np.asarray(p_hat, dtype=float))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), p_hat.shape[:1])
    values = np.asarray(values, dtype=float)
    S = values.shape[0]
    best = int(np.argmax(values))
    order = np.argsort(values, kind="stable")
    order = order[order != best]

    out = p_hat.copy()
    infinite = np.isinf(phi)
    finite = ~infinite
    if finite.any():
        rows = out[finite]
        add = np.minimum(phi[finite] / 2.0, 1.0 - rows[:, best])
        add = np.maximum(add, 0.0)
        donors = rows[:, order]
        taken_before = np.cumsum(donors, axis=1) - donors
        take = np.clip(add[:, None] - taken_before, 0.0, donors)
        rows[:, order] = donors - take
        rows[:, best] += add
        out[finite] = rows
    if infinite.any():
        out[infinite] = 0.0
        out[infinite, best] = 1.0
    if S == 1:
        out[:] = 1.0
    return out


def inner_l1_max(p_hat, values, phi: float) -> np.ndarray:
    """Single-row form of :func:`inner_l1_max_rows`."""
    if not phi >= 0:
        raise ValueError("radius must be non-negative")
    return inner_l1_max_rows(np.asarray(p_hat, dtype=float)[None, :], values,
                             np.array([phi]))[0]


# --------------------------------------------------------------------------
# joint oracles


def _stats_tables(stats: ArmStatistics, H: int, S: int, A: int):
    if stats.m != H * S * A or stats.d != S:
        raise ValueError(f"statistics have (m, d)=({stats.m}, {stats.d}), "
                         f"expected ({H * S * A}, {S})")
    return stats.counters.reshape(H, S, A), stats.means.reshape(H, S, A, S)


class EVIResult(NamedTuple):
    policy: np.ndarray
    transitions: np.ndarray
    v_upper: np.ndarray
    radius: np.ndarray


class OVIResult(NamedTuple):
    policy: np.ndarray
    transitions: np.ndarray
    v_upper: np.ndarray
    v_lower: np.ndarray
    radius: np.ndarray


def l1_radius_table(counts: np.ndarray, S: int, log_term: float) -> np.ndarray:
    radius = np.full(counts.shape, INFINITE_RADIUS)
    seen = counts > 0
    radius[seen] = np.sqrt(2.0 * S * log_term / counts[seen])
    return radius


def extended_value_iteration(stats: ArmStatistics, rewards, T: int, delta: float | None = None,
                             radius_override=None) -> EVIResult:
    """Optimistic planning over an L1 ball around each empirical transition row.

    ``radius_override`` replaces the computed per-arm radii (shape
    ``(H, S, A)``); it exists for audits that pin the radius, e.g. to zero.
    """
    R = np.asarray(rewards, dtype=float)
    H, S, A = R.shape
    counts, p_hat = _stats_tables(stats, H, S, A)
    if radius_override is None:
        delta = default_delta_l1(T) if delta is None else delta
        log_term = LogTerm.union_bound(S * A * H * T, delta).value
        radius = l1_radius_table(counts, S, log_term)
    else:
        radius = np.broadcast_to(np.asarray(radius_override, dtype=float), (H, S, A))

    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    p_tilde = np.zeros((H, S, A, S))
    states = np.arange(S)
    for h in range(H - 1, -1, -1):
        rows = inner_l1_max_rows(p_hat[h].reshape(S * A, S), V[h + 1], radius[h].ravel())
        p_tilde[h] = rows.reshape(S, A, S)
        Q = np.minimum(R[h] + p_tilde[h] @ V[h + 1], H - h)
        pi[h] = np.argmax(Q, axis=1)
        V[h] = Q[states, pi[h]]
    return EVIResult(pi, p_tilde, V, np.array(radius))


def optimistic_value_iteration(stats: ArmStatistics, rewards, T: int,
                               delta: float | None = None) -> OVIResult:
    """Optimistic/pessimistic backward induction with the variance-aware bonus."""
    R = np.asarray(rewards, dtype=float)
    H, S, A = R.shape
    counts, p_hat = _stats_tables(stats, H, S, A)
    delta = default_delta_variance(T) if delta is None else delta
    L = LogTerm.union_bound(S * A * H * T, delta).value

    V_up = np.zeros((H + 1, S))
    V_lo = np.zeros((H + 1, S))
    pi = np.zeros((H, S), dtype=np.int64)
    p_tilde = np.zeros((H, S, A, S))
    bonus = np.zeros((H, S, A))
    states = np.arange(S)
    eye = np.eye(S)
    for h in range(H - 1, -1, -1):
        v_next, lo_next = V_up[h + 1], V_lo[h + 1]
        rows = p_hat[h].reshape(S * A, S)
        phi = variance_aware_bonus_rows(rows, v_next, lo_next, counts[h].ravel(), L, H)
        bonus[h] = phi.reshape(S, A)
        s_star = int(np.argmax(v_next))
        emp = rows @ v_next
        top = v_next[s_star]
        saturate = top < emp + phi
        gap = top - emp
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.where(saturate | (gap <= 0), 0.0, phi / gap)
        mixed = (1.0 - lam)[:, None] * rows + lam[:, None] * eye[s_star]
        tilde = np.where(saturate[:, None], eye[s_star], mixed)
        p_tilde[h] = tilde.reshape(S, A, S)
        Q = np.minimum(R[h] + p_tilde[h] @ v_next, H - h)
        pi[h] = np.argmax(Q, axis=1)
        a = pi[h]
        V_up[h] = Q[states, a]
        lower = R[h, states, a] + p_hat[h, states, a] @ lo_next - bonus[h, states, a]
        V_lo[h] = np.maximum(lower, 0.0)
    return OVIResult(pi, p_tilde, V_up, V_lo, bonus)


class ExtendedVIOracle(JointOracle):
    kind = "extended-vi"

    def __init__(self, rewards, T: int, delta: float | None = None):
        self.rewards = np.asarray(rewards, dtype=float)
        self.H, self.S, self.A = self.rewards.shape
        self.m, self.d = self.H * self.S * self.A, self.S
        self.T = T
        self.delta = delta

    def propose(self, stats, t):
        res = extended_value_iteration(stats, self.rewards, self.T, self.delta)
        return Proposal(res.policy, res.transitions,
                        {"kind": self.kind, "v_upper": res.v_upper, "radius": res.radius})


class OptimisticVIOracle(JointOracle):
    kind = "optimistic-vi"

    def __init__(self, rewards, T: int, delta: float | None = None):
        self.rewards = np.asarray(rewards, dtype=float)
        self.H, self.S, self.A = self.rewards.shape
        self.m, self.d = self.H * self.S * self.A, self.S
        self.T = T
        self.delta = delta

    def propose(self, stats, t):
        res = optimistic_value_iteration(stats, self.rewards, self.T, self.delta)
        return Proposal(res.policy, res.transitions,
                        {"kind": self.kind, "v_upper": res.v_upper, "v_lower": res.v_lower,
                         "radius": res.radius})


# --------------------------------------------------------------------------
# smoothness and performance-difference identities (test plane)


class SmoothnessTerms(NamedTuple):
    lhs: float
    rhs_tight: float
    rhs_loose: float


def mtpm_bound_terms(mdp: TabularMdp, p_tilde, pi) -> SmoothnessTerms:
    """Both sides of the loose (H-weighted L1) and tight (future-value
    weighted) smoothness inequalities for one ``(p, p_tilde, pi)``."""
    pi = validate_policy(mdp, pi)
    p_tilde = np.asarray(p_tilde, dtype=float)
    s1 = mdp.initial_state
    V = _evaluate(mdp.transitions, mdp.rewards, pi)
    V_tilde = _evaluate(p_tilde, mdp.rewards, pi)
    q = occupancy_measure(mdp, pi)
    diff = p_tilde - mdp.transitions
    lhs = abs(V_tilde[0, s1] - V[0, s1])
    rhs_loose = mdp.H * float((q * np.abs(diff).sum(axis=-1)).sum())
    future = np.einsum("hsaj,hj->hsa", diff, V_tilde[1:])
    rhs_tight = float((q * np.abs(future)).sum())
    return SmoothnessTerms(lhs, rhs_tight, rhs_loose)


def performance_difference(mdp: TabularMdp, v_star: np.ndarray, pi) -> float:
    """``sum_{s,a,h} q^pi(s,a,h) [V*_h(s) - Q*_h(s,a)]``."""
    q = occupancy_measure(mdp, pi)
    Q = q_values(mdp, v_star)
    return float((q * (v_star[:-1, :, None] - Q)).sum())


# --------------------------------------------------------------------------
# environment


class EpisodicEnvironment(Environment):
    alpha = 1.0

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        self.m = mdp.H * mdp.S * mdp.A
        self.d = mdp.S
        self._cdf = np.cumsum(mdp.transitions, axis=-1)
        self.v_star, self.pi_star = optimal_values(mdp)
        self._cache: dict = {}

    @property
    def optimal_value(self) -> float:
        return float(self.v_star[0, self.mdp.initial_state])

    def is_feasible(self, action) -> bool:
        try:
            validate_policy(self.mdp, action)
        except ValueError:
            return False
        return True

    def action_id(self, action) -> str:
        return "".join(str(int(a)) for a in np.asarray(action).ravel())

    def sample_round(self, action, rng):
        ep = sample_episode(self.mdp, action, rng, cdf=self._cdf)
        return ep.observations, float(ep.rewards.sum())

    def exact_expected_reward(self, action) -> float:
        key = np.asarray(action, dtype=np.int64).tobytes()
        val = self._cache.get(key)
        if val is None:
            V = _evaluate(self.mdp.transitions, self.mdp.rewards, np.asarray(action))
            val = self._cache[key] = float(V[0, self.mdp.initial_state])
        return val

    def audit(self, stats, proposal, t):
        diag = proposal.diagnostics
        kind = diag.get("kind")
        if kind is None:
            return None, None
        mdp = self.mdp
        counts, p_hat = _stats_tables(stats, mdp.H, mdp.S, mdp.A)
        seen = counts > 0
        radius = diag["radius"]
        v_up = diag["v_upper"]
        if kind == ExtendedVIOracle.kind:
            dev = np.abs(p_hat - mdp.transitions).sum(axis=-1)
            truth_in = bool(np.all(dev[seen] <= radius[seen]))
            optimism = bool(np.all(v_up >= self.v_star - AUDIT_TOL))
        else:
            future = np.einsum("hsaj,hj->hsa", p_hat - mdp.transitions, self.v_star[1:])
            truth_in = bool(np.all(np.abs(future[seen]) <= radius[seen]))
            v_lo = diag["v_lower"]
            optimism = bool(np.all(v_lo <= self.v_star + AUDIT_TOL)
                            and np.all(self.v_star <= v_up + AUDIT_TOL))
        return optimism, truth_in


# --------------------------------------------------------------------------
# instances


def random_mdp(S: int, A: int, H: int, seed: int, initial_state: int = 0) -> TabularMdp:
    """Uniform-Dirichlet transition rows and uniform mean rewards."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    R = rng.random((H, S, A))
    return TabularMdp(P, R, initial_state)


def write_mdp(mdp: TabularMdp, path) -> None:
    """Plain-text tabular format, see :func:`read_mdp`."""
    lines = [f"{mdp.S} {mdp.A} {mdp.H} {mdp.initial_state}"]
    for h in range(mdp.H):
        for s in range(mdp.S):
            lines.append(" ".join(repr(float(x)) for x in mdp.rewards[h, s]))
    for h in range(mdp.H):
        for s in range(mdp.S):
            for a in range(mdp.A):
                lines.append(" ".join(repr(float(x)) for x in mdp.transitions[h, s, a]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mdp(path) -> TabularMdp:
    """Read ``S A H s1``, then ``H*S`` reward rows of ``A`` numbers (step-major),
    then ``H*S*A`` transition rows of ``S`` numbers ordered by ``(h, s, a)``.
    Blank lines and ``#`` comments are ignored; steps are 1..H in the file
    order but 0-based in memory."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if len(tokens) < 4:
        raise ValueError(f"{path}: missing 'S A H s1' header")
    S, A, H, s1 = (int(x) for x in tokens[:4])
    body = np.array([float(x) for x in tokens[4:]])
    n_r, n_p = H * S * A, H * S * A * S
    if body.size != n_r + n_p:
        raise ValueError(f"{path}: expected {n_r + n_p} numbers after the header, "
                         f"found {body.size}")
    R = body[:n_r].reshape(H, S, A)
    P = body[n_r:].reshape(H, S, A, S)
    return TabularMdp(P, R, s1)
