"""Invariant audits run against synthetic instances with a known truth.

Every audit returns an :class:`AuditResult`; the ``audit`` CLI subcommand and
the acceptance tests print one line per result.  Reference computations here
(policy enumeration, trajectory enumeration, simplex grids) deliberately avoid
the dynamic programs they check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import concentration as conc
from .episodic import (EpisodicEnvironment, ExtendedVIOracle, OptimisticVIOracle, TabularMdp,
                       inner_l1_max, mtpm_bound_terms, occupancy_measure, optimal_values,
                       performance_difference, random_mdp, value_of_policy)
from .framework import run_cucb_mt
from .pmcgd import (ALPHA, BipartiteInstance, brute_force_best, coverage_reward, greedy_max,
                    max_l1_deviation, random_instance)


@dataclass(frozen=True)
class AuditResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# --------------------------------------------------------------------------
# reference computations


def enumerate_policies(S: int, A: int, H: int):
    for flat in itertools.product(range(A), repeat=S * H):
        yield np.array(flat, dtype=np.int64).reshape(H, S)


def path_value(mdp: TabularMdp, pi) -> float:
    """Expected return by summing over every state path (no recursion on V)."""
    total = 0.0
    s1 = mdp.initial_state
    for path in itertools.product(range(mdp.S), repeat=mdp.H - 1):
        states = (s1,) + path
        prob, ret = 1.0, 0.0
        for h, s in enumerate(states):
            a = pi[h, s]
            ret += mdp.rewards[h, s, a]
            if h + 1 < mdp.H:
                prob *= mdp.transitions[h, s, a, states[h + 1]]
        total += prob * ret
    return total


def simplex_grid(d: int, resolution: float = 1e-3) -> np.ndarray:
    n = int(round(1.0 / resolution))
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        i = np.arange(n + 1)
        return np.column_stack([i, n - i]) / n
    if d == 3:
        i, j = np.triu_indices(n + 1)
        # i <= j, so (i, j - i, n - j) enumerates all compositions of n
        return np.column_stack([i, j - i, n - j]) / n
    raise ValueError("grid oracle only supports d <= 3")


def random_simplex(rng, d: int) -> np.ndarray:
    return rng.dirichlet(np.ones(d))


def random_policy(rng, mdp: TabularMdp) -> np.ndarray:
    return rng.integers(0, mdp.A, size=(mdp.H, mdp.S))


# --------------------------------------------------------------------------
# episodic RL


def audit_planning(n_mdps: int = 50, seed: int = 0, tol: float = 1e-10) -> AuditResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_mdps):
        S, A, H = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 4)
        mdp = random_mdp(int(S), int(A), int(H), seed=seed * 1000 + i)
        V, _ = optimal_values(mdp)
        brute = max(path_value(mdp, pi) for pi in enumerate_policies(mdp.S, mdp.A, mdp.H))
        worst = max(worst, abs(V[0, mdp.initial_state] - brute))
    return AuditResult("optimal values vs policy enumeration", worst <= tol,
                       f"{n_mdps} MDPs, max |V* - brute| = {worst:.3g}")


def audit_occupancy(n_pairs: int = 100, seed: int = 0, tol: float = 1e-10) -> AuditResult:
    rng = np.random.default_rng(seed)
    worst_norm = worst_reward = 0.0
    for i in range(n_pairs):
        S, A, H = (int(x) for x in rng.integers(1, 5, size=3))
        mdp = random_mdp(S, A, H, seed=seed * 1000 + i)
        pi = random_policy(rng, mdp)
        q = occupancy_measure(mdp, pi)
        worst_norm = max(worst_norm, np.abs(q.sum(axis=(1, 2)) - 1.0).max())
        v = value_of_policy(mdp, pi)[0, mdp.initial_state]
        worst_reward = max(worst_reward, abs((q * mdp.rewards).sum() - v))
    ok = worst_norm <= tol and worst_reward <= tol
    return AuditResult("occupancy normalisation and reward identity", ok,
                       f"{n_pairs} pairs, max norm err {worst_norm:.3g}, "
                       f"max reward err {worst_reward:.3g}")


def perturbed_transitions(rng, P: np.ndarray) -> np.ndarray:
    """Random simplex rows mixed with the originals at a random per-row weight."""
    lam = rng.random(P.shape[:-1] + (1,))
    other = rng.dirichlet(np.ones(P.shape[-1]), size=P.shape[:-1])
    return (1 - lam) * P + lam * other


def audit_rl_smoothness(n_triples: int = 10_000, seed: int = 0, S: int = 3, A: int = 2,
                        H: int = 3) -> AuditResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for i in range(n_triples):
        mdp = random_mdp(S, A, H, seed=int(rng.integers(2**63)))
        p_tilde = perturbed_transitions(rng, mdp.transitions)
        pi = random_policy(rng, mdp)
        t = mtpm_bound_terms(mdp, p_tilde, pi)
        if not (t.lhs <= t.rhs_tight + 1e-12 and t.rhs_tight <= t.rhs_loose + 1e-12):
            bad += 1
    return AuditResult("RL smoothness lhs <= tight <= loose", bad == 0,
                       f"{bad} violations in {n_triples} triples")


def audit_performance_difference(n_pairs: int = 200, seed: int = 0,
                                 tol: float = 1e-10) -> AuditResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_pairs):
        mdp = random_mdp(3, 2, 3, seed=seed * 1000 + i)
        V, _ = optimal_values(mdp)
        pi = random_policy(rng, mdp)
        direct = V[0, mdp.initial_state] - value_of_policy(mdp, pi)[0, mdp.initial_state]
        worst = max(worst, abs(performance_difference(mdp, V, pi) - direct))
    return AuditResult("performance difference identity", worst <= tol,
                       f"{n_pairs} pairs, max err {worst:.3g}")


def audit_concentration(trials: int = 10_000, seed: int = 0, delta: float = 0.05):
    results = [
        conc.l1_coverage([0.3, 0.7], 50, delta, trials, seed),
        conc.bernstein_coverage(0.2, 100, delta, trials, seed + 1),
    ]
    mdp = random_mdp(3, 2, 3, seed=seed)
    v_star, _ = optimal_values(mdp)
    results.append(conc.future_value_coverage(mdp.transitions[0, 0, 0], v_star[1], 50, mdp.H,
                                              delta, trials, seed + 2))
    return [AuditResult(f"coverage {r.name}", r.passed,
                        f"violation rate {r.rate:.4f} <= {r.threshold:.4f}")
            for r in results]


def sandwich_runs(n_runs: int = 200, T: int = 500, seed: int = 0, instance_seed: int = 0,
                  oracle: str = "optimistic-vi", S: int = 3, A: int = 2, H: int = 3):
    """Per-run audit flag arrays for repeated CUCB-MT runs on one MDP."""
    mdp = random_mdp(S, A, H, seed=instance_seed)
    env = EpisodicEnvironment(mdp)
    cls = OptimisticVIOracle if oracle == "optimistic-vi" else ExtendedVIOracle
    runs = []
    for r in range(n_runs):
        trace = run_cucb_mt(env, cls(mdp.rewards, T), T, seed=seed + r, audit=True,
                            keep_observations=False)
        runs.append((np.array([rec.optimism_held for rec in trace], dtype=bool),
                     np.array([rec.truth_in_region for rec in trace], dtype=bool)))
    return runs


def audit_sandwich(n_runs: int = 200, T: int = 500, seed: int = 0,
                   instance_seed: int = 0) -> list:
    out = []
    runs = sandwich_runs(n_runs, T, seed, instance_seed, "optimistic-vi")
    delta = 1.0 / T  # failure probability of the joint concentration event at delta' = 1/(8T)
    failed = sum(1 for opt, _ in runs if not opt.all())
    rate = failed / n_runs
    threshold = delta + 2 * math.sqrt(delta * (1 - delta) / n_runs)
    out.append(AuditResult("optimistic VI sandwich V_lo <= V* <= V_up", rate <= threshold,
                           f"{failed}/{n_runs} runs violated (rate {rate:.4f} <= "
                           f"{threshold:.4f})"))
    runs = sandwich_runs(n_runs, T, seed, instance_seed, "extended-vi")
    bad = sum(int((truth & ~opt).sum()) for opt, truth in runs)
    covered = sum(int(truth.sum()) for _, truth in runs)
    out.append(AuditResult("extended VI optimism when truth in region", bad == 0,
                           f"{bad} violations over {covered} in-region rounds"))
    return out


def audit_inner_l1_max(n_inputs: int = 1000, seed: int = 0, tol: float = 2e-3) -> AuditResult:
    rng = np.random.default_rng(seed)
    grids = {2: simplex_grid(2), 3: simplex_grid(3)}
    worst = 0.0
    above = 0
    for i in range(n_inputs):
        d = 2 + i % 2
        p_hat = random_simplex(rng, d)
        values = rng.random(d)
        phi = rng.uniform(0, 2.2)
        ours = inner_l1_max(p_hat, values, phi) @ values
        g = np.vstack([grids[d], p_hat])  # the centre is always feasible
        feasible = np.abs(g - p_hat).sum(axis=1) <= phi + 1e-12
        best = (g[feasible] @ values).max() if feasible.any() else -np.inf
        if best > ours + 1e-12:
            above += 1
        worst = max(worst, abs(ours - best))
    return AuditResult("inner_l1_max vs simplex grid", worst <= tol and above == 0,
                       f"{n_inputs} inputs, max gap {worst:.3g}, grid above ours {above}")


# --------------------------------------------------------------------------
# PMC-GD


def audit_max_l1_deviation(n_inputs: int = 1000, seed: int = 0,
                           tol: float = 2e-3) -> AuditResult:
    rng = np.random.default_rng(seed)
    grids = {2: simplex_grid(2), 3: simplex_grid(3)}
    worst = 0.0
    above = 0
    for i in range(n_inputs):
        d = 2 + i % 2
        p_hat = random_simplex(rng, d)
        phi = rng.uniform(0, 2.2)
        p_tilde, q = max_l1_deviation(p_hat, phi)
        g = np.vstack([grids[d], p_hat])
        dist = np.abs(g - p_hat).sum(axis=1)
        feasible = dist <= phi + 1e-12
        best = dist[feasible].max()
        if best > q + 1e-12 or abs(np.abs(p_tilde - p_hat).sum() - q) > 1e-12:
            above += 1
        worst = max(worst, abs(q - best))
    return AuditResult("max_l1_deviation vs simplex grid", worst <= tol and above == 0,
                       f"{n_inputs} inputs, max gap {worst:.3g}, failures {above}")


def random_seed_set(rng, U: int, k: int) -> tuple:
    size = int(rng.integers(0, k + 1))
    return tuple(sorted(rng.choice(U, size=size, replace=False).tolist()))


def audit_pmc_smoothness(n_triples: int = 10_000, seed: int = 0, U: int = 8,
                         V: int = 6) -> list:
    """Coverage smoothness in L1 and pseudo-reward dominance on random triples."""
    rng = np.random.default_rng(seed)
    bad_smooth = bad_dom = 0
    for _ in range(n_triples):
        k = int(rng.integers(1, U + 1))
        p = rng.dirichlet(np.ones(V + 1), size=U)
        p_tilde = rng.dirichlet(np.ones(V + 1), size=U)
        inst = BipartiteInstance(p[:, :V], k)
        seeds = random_seed_set(rng, U, k)
        lhs = abs(coverage_reward(inst, seeds, p_tilde) - coverage_reward(inst, seeds, p))
        rhs = np.abs(p_tilde[list(seeds)] - p[list(seeds)]).sum() if seeds else 0.0
        if lhs > rhs + 1e-12:
            bad_smooth += 1
        # oracle-produced optimistic rows around an empirical p_hat = p
        n = rng.integers(1, 50, size=U)
        phi = np.sqrt(2 * (V + 1) * 3.0 / n)
        rows = np.array([max_l1_deviation(p[u], phi[u])[0] for u in range(U)])
        pseudo = coverage_reward(inst, seeds, p) + (
            np.abs(rows[list(seeds)] - p[list(seeds)]).sum() if seeds else 0.0)
        if coverage_reward(inst, seeds, rows) > pseudo + 1e-12:
            bad_dom += 1
    return [
        AuditResult("PMC-GD coverage smoothness", bad_smooth == 0,
                    f"{bad_smooth} violations in {n_triples} triples"),
        AuditResult("pseudo-reward dominance", bad_dom == 0,
                    f"{bad_dom} violations in {n_triples} triples"),
    ]


def audit_submodularity(n_triples: int = 1000, seed: int = 0, U: int = 8,
                        V: int = 6) -> AuditResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_triples):
        inst = random_instance(U, V, U, seed=int(rng.integers(2**63)))
        big = set(rng.choice(U, size=int(rng.integers(0, U)), replace=False).tolist())
        outside = [u for u in range(U) if u not in big]
        u = int(rng.choice(outside))
        small = {x for x in big if rng.random() < 0.5}
        g_small = (coverage_reward(inst, sorted(small | {u}))
                   - coverage_reward(inst, sorted(small)))
        g_big = coverage_reward(inst, sorted(big | {u})) - coverage_reward(inst, sorted(big))
        if g_small < g_big - 1e-12:
            bad += 1
    return AuditResult("coverage submodularity", bad == 0,
                       f"{bad} violations in {n_triples} triples")


def audit_greedy(n_instances: int = 100, seed: int = 0) -> AuditResult:
    rng = np.random.default_rng(seed)
    bad = 0
    worst_ratio = math.inf
    for i in range(n_instances):
        U = int(rng.integers(2, 11))
        V = int(rng.integers(1, 8))
        k = int(rng.integers(1, min(3, U) + 1))
        inst = random_instance(U, V, k, seed=seed * 1000 + i)
        g = coverage_reward(inst, greedy_max(lambda s: coverage_reward(inst, s), U, k))
        _, opt = brute_force_best(inst, k)
        if opt > 0:
            worst_ratio = min(worst_ratio, g / opt)
        if g < ALPHA * opt - 1e-12:
            bad += 1
    return AuditResult("greedy >= (1 - 1/e) optimum", bad == 0,
                       f"{bad} violations in {n_instances} instances, "
                       f"worst ratio {worst_ratio:.4f}")


def rl_suite(seed: int = 0) -> list:
    results = [audit_planning(seed=seed), audit_occupancy(seed=seed),
               audit_rl_smoothness(seed=seed), audit_performance_difference(seed=seed),
               audit_inner_l1_max(seed=seed)]
    results += audit_concentration(seed=seed)
    results += audit_sandwich(seed=seed, instance_seed=seed)
    return results


def pmc_suite(seed: int = 0) -> list:
    results = audit_pmc_smoothness(seed=seed)
    results += [audit_submodularity(seed=seed), audit_greedy(seed=seed),
                audit_max_l1_deviation(seed=seed)]
    results += audit_concentration(seed=seed)
    return results
