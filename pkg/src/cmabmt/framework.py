"""Core CMAB-MT data model and the CUCB-MT learner loop.

The learner keeps one counter and one empirical mean vector per base arm,
asks a joint oracle for an (action, optimistic parameter) pair each round,
plays the action in the environment and folds the triggered outcomes back
into its statistics.  Regret is accounted with the environment's exact
expected-reward evaluator, never with sampled rewards.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

INFINITE_RADIUS = math.inf
"""Radius of an arm that has never been observed (region = whole space)."""


class MalformedRoundError(ValueError):
    """A round reported the same arm more than once."""


class InfeasibleActionError(RuntimeError):
    """The oracle proposed an action outside the environment's action set."""


@dataclass(frozen=True)
class RadiusParams:
    """Scales of the ``1/sqrt(N)`` and ``1/N`` terms of a confidence radius."""

    F: float = 0.0
    I: float = 0.0

    def __post_init__(self):
        if self.F < 0 or self.I < 0:
            raise ValueError(f"radius scales must be non-negative, got F={self.F}, I={self.I}")


def confidence_radius(params: RadiusParams, n: int) -> float:
    if n < 0:
        raise ValueError("counter must be non-negative")
    if n == 0:
        return INFINITE_RADIUS
    return params.F / math.sqrt(n) + params.I / n


@dataclass(frozen=True)
class TriggeredObservation:
    arm_index: int
    outcome: np.ndarray


class ArmStatistics:
    """Per-arm counters and empirical mean rows.

    ``counters`` has shape ``(m,)`` and ``means`` shape ``(m, d)``.  Arms that
    were never triggered keep the all-zero mean row.
    """

    def __init__(self, m: int, d: int):
        self.m = int(m)
        self.d = int(d)
        self.counters = np.zeros(self.m, dtype=np.int64)
        self.means = np.zeros((self.m, self.d), dtype=float)

    def copy(self) -> "ArmStatistics":
        other = ArmStatistics(self.m, self.d)
        other.counters = self.counters.copy()
        other.means = self.means.copy()
        return other

    def update(self, observations: Sequence[TriggeredObservation]) -> "ArmStatistics":
        """Apply one round of observations in place and return ``self``."""
        seen = set()
        for obs in observations:
            i = obs.arm_index
            if i in seen:
                raise MalformedRoundError(f"arm {i} triggered twice in one round")
            if not 0 <= i < self.m:
                raise MalformedRoundError(f"arm index {i} out of range [0, {self.m})")
            if len(obs.outcome) != self.d:
                raise MalformedRoundError(
                    f"outcome of arm {i} has length {len(obs.outcome)}, expected {self.d}")
            seen.add(i)
        for obs in observations:
            i = obs.arm_index
            self.counters[i] += 1
            self.means[i] += (obs.outcome - self.means[i]) / self.counters[i]
        return self

    def __repr__(self):
        return f"ArmStatistics(m={self.m}, d={self.d}, total_count={int(self.counters.sum())})"


def update_statistics(stats: ArmStatistics,
                      observations: Sequence[TriggeredObservation]) -> ArmStatistics:
    """Incremental-mean update of the triggered arms (mutates ``stats``)."""
    return stats.update(observations)


@dataclass
class Proposal:
    """What a joint oracle returns: the action, the optimistic parameter and
    any oracle-internal tables the audits may want to look at."""

    action: Any
    parameter: Any = None
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        # lets callers write ``action, mu_tilde = oracle.propose(...)``
        return iter((self.action, self.parameter))


class Environment(abc.ABC):
    """A CMAB-MT instance: ``m`` arms with ``d``-dimensional outcomes."""

    m: int
    d: int
    alpha: float = 1.0

    @property
    @abc.abstractmethod
    def optimal_value(self) -> float:
        """Expected reward of the best feasible action."""

    @abc.abstractmethod
    def is_feasible(self, action) -> bool:
        ...

    @abc.abstractmethod
    def sample_round(self, action, rng: np.random.Generator):
        """Play ``action``; return ``(observations, realized_reward)``."""

    @abc.abstractmethod
    def exact_expected_reward(self, action) -> float:
        ...

    def action_id(self, action) -> str:
        return str(action)

    def audit(self, stats: ArmStatistics, proposal: Proposal, t: int):
        """Test-plane check against the true parameter.

        Returns ``(optimism_held, truth_in_region)``; ``None`` entries mean the
        environment does not define that flag.
        """
        return None, None


class JointOracle(abc.ABC):
    m: int
    d: int

    @abc.abstractmethod
    def propose(self, stats: ArmStatistics, t: int) -> Proposal:
        ...


@dataclass
class RoundRecord:
    t: int
    action_id: str
    observations: list
    instant_regret: float
    cum_regret: float
    realized_reward: float = float("nan")
    optimism_held: bool | None = None
    truth_in_region: bool | None = None


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    @property
    def instant_regret(self) -> np.ndarray:
        return np.array([r.instant_regret for r in self.records])

    @property
    def cum_regret(self) -> np.ndarray:
        return np.array([r.cum_regret for r in self.records])

    @property
    def action_ids(self) -> list:
        return [r.action_id for r in self.records]


def round_rng(seed: int, t: int) -> np.random.Generator:
    """Counter-based stream for round ``t`` of a run seeded with ``seed``.

    Philox keyed by the 64-bit seed with the round index in the counter's
    high word, so round streams never overlap and do not depend on the order
    in which runs are executed.  Draws within a round are consumed in a fixed
    (step, arm) order by the environments.
    """
    key = int(seed) & 0xFFFFFFFFFFFFFFFF
    bitgen = np.random.Philox(key=key, counter=[0, 0, 0, int(t)])
    return np.random.Generator(bitgen)


def run_cucb_mt(env: Environment, oracle: JointOracle, horizon_rounds: int, seed: int,
                stats: ArmStatistics | None = None, audit: bool = True,
                keep_observations: bool = True) -> Trace:
    """Run CUCB-MT for ``horizon_rounds`` rounds and return the trace."""
    if horizon_rounds < 1:
        raise ValueError("horizon_rounds must be >= 1")
    if (env.m, env.d) != (oracle.m, oracle.d):
        raise ValueError(f"environment has (m, d)=({env.m}, {env.d}) "
                         f"but oracle expects ({oracle.m}, {oracle.d})")
    if stats is None:
        stats = ArmStatistics(env.m, env.d)
    target = env.alpha * env.optimal_value
    trace = Trace()
    cum = 0.0
    for t in range(1, horizon_rounds + 1):
        proposal = oracle.propose(stats, t)
        action = proposal.action
        if not env.is_feasible(action):
            raise InfeasibleActionError(f"round {t}: oracle proposed infeasible action {action!r}")
        optimism_held = truth_in_region = None
        if audit:
            optimism_held, truth_in_region = env.audit(stats, proposal, t)
        observations, realized = env.sample_round(action, round_rng(seed, t))
        stats.update(observations)
        inst = target - env.exact_expected_reward(action)
        cum += inst
        trace.records.append(RoundRecord(
            t=t, action_id=env.action_id(action),
            observations=list(observations) if keep_observations else [],
            instant_regret=inst, cum_regret=cum, realized_reward=realized,
            optimism_held=optimism_held, truth_in_region=truth_in_region))
    return trace
