import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmabmt.concentration import LogTerm, default_delta_variance, variance_aware_bonus_rows
from cmabmt.episodic import (EpisodicEnvironment, ExtendedVIOracle, OptimisticVIOracle,
                             TabularMdp, extended_value_iteration, inner_l1_max,
                             mtpm_bound_terms, occupancy_measure, optimal_values,
                             optimistic_value_iteration, performance_difference, random_mdp,
                             read_mdp, sample_episode, value_of_policy, write_mdp)
from cmabmt.framework import ArmStatistics, run_cucb_mt

from conftest import chain_mdp


def exact_stats(mdp, n=1):
    """Statistics whose empirical rows equal the true transitions."""
    stats = ArmStatistics(mdp.H * mdp.S * mdp.A, mdp.S)
    stats.counters[:] = n
    stats.means[:] = mdp.transitions.reshape(-1, mdp.S)
    return stats


def all_policies(mdp):
    for flat in itertools.product(range(mdp.A), repeat=mdp.S * mdp.H):
        yield np.array(flat).reshape(mdp.H, mdp.S)


# -- model validation ------------------------------------------------------

def test_rejects_bad_rows_and_rewards():
    P = np.full((1, 2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(P * 1.1, np.zeros((1, 2, 1)))
    with pytest.raises(ValueError):
        TabularMdp(P, np.full((1, 2, 1), 1.5))
    with pytest.raises(ValueError):
        TabularMdp(P, np.zeros((1, 2, 1)), initial_state=2)


# -- evaluation and planning -----------------------------------------------

def test_value_simple_cases():
    one = TabularMdp(np.ones((1, 1, 1, 1)), [[[0.7]]])
    assert value_of_policy(one, [[0]])[0, 0] == pytest.approx(0.7)
    assert value_of_policy(chain_mdp([0.3, 0.4]), [[0], [0]])[0, 0] == pytest.approx(0.7)


def test_value_matches_monte_carlo():
    mdp = random_mdp(3, 2, 3, seed=21)
    pi = np.array([[0, 1, 1], [1, 0, 1], [0, 0, 1]])
    n = 1_000_000
    rng = np.random.default_rng(0)
    s = np.full(n, mdp.initial_state)
    ret = np.zeros(n)
    for h in range(mdp.H):
        a = pi[h, s]
        ret += rng.random(n) < mdp.rewards[h, s, a]
        cdf = np.cumsum(mdp.transitions[h, s, a], axis=1)
        s = np.minimum((rng.random(n)[:, None] >= cdf).sum(axis=1), mdp.S - 1)
    se = ret.std() / np.sqrt(n)
    assert abs(ret.mean() - value_of_policy(mdp, pi)[0, 0]) <= 3 * se


def test_optimal_values_enumeration():
    mdp = random_mdp(2, 2, 2, seed=3)
    V, pi = optimal_values(mdp)
    brute = max(value_of_policy(mdp, p)[0, 0] for p in all_policies(mdp))
    assert len(list(all_policies(mdp))) == 16
    assert V[0, 0] == pytest.approx(brute, abs=1e-12)
    assert value_of_policy(mdp, pi)[0, 0] == pytest.approx(V[0, 0], abs=1e-12)


def test_optimal_values_degenerate_cases():
    rng = np.random.default_rng(1)
    P = rng.dirichlet(np.ones(3), size=(2, 3, 1))
    mdp = TabularMdp(P, rng.random((2, 3, 1)))
    V, pi = optimal_values(mdp)
    assert np.allclose(V, value_of_policy(mdp, np.zeros((2, 3), dtype=int)))
    zero = TabularMdp(random_mdp(3, 2, 2, 0).transitions, np.zeros((2, 3, 2)))
    V, pi = optimal_values(zero)
    assert not V.any() and not pi.any()


def test_occupancy_simple_cases():
    mdp = random_mdp(3, 2, 1, seed=0)
    q = occupancy_measure(mdp, [[1, 0, 0]])
    expected = np.zeros((1, 3, 2))
    expected[0, 0, 1] = 1
    assert np.array_equal(q, expected)
    P = np.zeros((2, 2, 1, 2))
    P[0, :, 0] = [0.5, 0.5]
    P[1, :, 0] = [1.0, 0.0]
    q = occupancy_measure(TabularMdp(P, np.zeros((2, 2, 1))), [[0, 0], [0, 0]])
    assert np.allclose(q[1, :, 0], [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 4), st.integers(0, 10**6))
def test_occupancy_identities(S, A, H, seed):
    mdp = random_mdp(S, A, H, seed)
    pi = np.random.default_rng(seed).integers(0, A, size=(H, S))
    q = occupancy_measure(mdp, pi)
    assert np.allclose(q.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert q.sum() == pytest.approx(H)
    assert (q * mdp.rewards).sum() == pytest.approx(value_of_policy(mdp, pi)[0, 0], abs=1e-10)


# -- sampling --------------------------------------------------------------

def test_deterministic_episode_follows_path(rng):
    P = np.zeros((3, 3, 1, 3))
    for h in range(3):
        for s in range(3):
            P[h, s, 0, (s + 1) % 3] = 1
    mdp = TabularMdp(P, np.zeros((3, 3, 1)))
    ep = sample_episode(mdp, np.zeros((3, 3), dtype=int), rng)
    assert list(ep.states) == [0, 1, 2, 0]
    assert [o.arm_index for o in ep.observations] == [0, 4, 8]


def test_single_state_observations(rng):
    ep = sample_episode(chain_mdp([0.5, 0.5]), np.zeros((2, 1), dtype=int), rng)
    assert all(np.array_equal(o.outcome, [1.0]) for o in ep.observations)


def test_visit_frequencies_match_occupancy():
    mdp = random_mdp(3, 2, 3, seed=8)
    pi = np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]])
    n = 100_000
    counts = np.zeros((3, 3, 2))
    rng = np.random.default_rng(3)
    for _ in range(n):
        ep = sample_episode(mdp, pi, rng)
        for h in range(3):
            counts[h, ep.states[h], ep.actions[h]] += 1
    q = occupancy_measure(mdp, pi)
    se = np.sqrt(q * (1 - q) / n)
    assert np.all(np.abs(counts / n - q) <= 3 * se + 1e-12)


# -- inner maximisation ----------------------------------------------------

def test_inner_l1_max_examples():
    assert np.allclose(inner_l1_max([0.5, 0.5], [1, 0], 0.4), [0.7, 0.3])
    for phi in (2.0, np.inf):
        out = inner_l1_max([0.2, 0.3, 0.5], [0.1, 0.9, 0.4], phi)
        assert np.allclose(out, [0, 1, 0])
    p = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(inner_l1_max(p, [0.1, 0.9, 0.4], 0.0), p)
    assert np.allclose(inner_l1_max([0, 0, 0], [0.1, 0.9, 0.4], np.inf), [0, 1, 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.floats(0, 2.5), st.integers(0, 2**32 - 1))
def test_inner_l1_max_is_feasible_and_beats_random_feasible_points(S, phi, seed):
    r = np.random.default_rng(seed)
    p_hat = r.dirichlet(np.ones(S))
    v = r.random(S)
    out = inner_l1_max(p_hat, v, phi)
    assert out.min() >= -1e-12 and out.sum() == pytest.approx(1.0)
    assert np.abs(out - p_hat).sum() <= phi + 1e-9
    for _ in range(20):
        cand = r.dirichlet(np.ones(S))
        lam = min(1.0, phi / max(np.abs(cand - p_hat).sum(), 1e-300))
        feasible = p_hat + lam * (cand - p_hat)
        assert feasible @ v <= out @ v + 1e-12


# -- extended VI -----------------------------------------------------------

def test_evi_zero_radius_matches_optimal_values():
    for seed in range(10):
        mdp = random_mdp(3, 2, 3, seed)
        res = extended_value_iteration(exact_stats(mdp), mdp.rewards, 100, radius_override=0.0)
        V, pi = optimal_values(mdp)
        assert np.allclose(res.v_upper, V, atol=1e-12)
        assert np.array_equal(res.policy, pi)


def test_evi_cold_start_equals_best_next_state_mdp():
    mdp = random_mdp(3, 2, 3, seed=5)
    stats = ArmStatistics(mdp.H * mdp.S * mdp.A, mdp.S)
    res = extended_value_iteration(stats, mdp.rewards, 100)
    # explicit optimistic MDP: every (s, a, h) jumps to the best next state
    V = np.zeros((mdp.H + 1, mdp.S))
    for h in reversed(range(mdp.H)):
        V[h] = (mdp.rewards[h] + V[h + 1].max()).max(axis=1)
    assert np.allclose(res.v_upper, V, atol=1e-12)


def test_evi_single_state():
    rng = np.random.default_rng(2)
    R = rng.random((4, 1, 3))
    mdp = TabularMdp(np.ones((4, 1, 3, 1)), R)
    res = extended_value_iteration(exact_stats(mdp, 5), R, 100)
    assert res.v_upper[0, 0] == pytest.approx(R.max(axis=2).sum())
    assert np.array_equal(res.policy[:, 0], R[:, 0].argmax(axis=1))


def test_value_cap():
    mdp = random_mdp(3, 2, 4, seed=1)
    stats = ArmStatistics(mdp.H * mdp.S * mdp.A, mdp.S)
    for res in (extended_value_iteration(stats, mdp.rewards, 10),
                optimistic_value_iteration(stats, mdp.rewards, 10)):
        caps = mdp.H - np.arange(mdp.H + 1)
        assert np.all(res.v_upper <= caps[:, None] + 1e-12)


# -- optimistic VI ---------------------------------------------------------

def test_ovi_constant_next_values_take_if_branch():
    mdp = random_mdp(3, 2, 1, seed=4)
    res = optimistic_value_iteration(exact_stats(mdp, 3), mdp.rewards, 50)
    # with H = 1 the next-step values are the constant 0: p_tilde = one-hot(s* = 0)
    assert np.allclose(res.transitions[0, ..., 0], 1.0)
    assert np.allclose(res.v_upper[0], np.minimum(mdp.rewards[0].max(axis=1), 1))


def test_ovi_sandwich_with_exact_statistics():
    for seed in range(20):
        mdp = random_mdp(3, 2, 3, seed)
        res = optimistic_value_iteration(exact_stats(mdp, 40), mdp.rewards, 1000)
        V, _ = optimal_values(mdp)
        assert np.all(res.v_lower <= V + 1e-12)
        assert np.all(V <= res.v_upper + 1e-12)


def test_ovi_expected_next_value_construction():
    rng = np.random.default_rng(0)
    T = 500
    for seed in range(20):
        mdp = random_mdp(4, 2, 3, seed)
        stats = ArmStatistics(mdp.H * mdp.S * mdp.A, mdp.S)
        stats.counters[:] = rng.integers(1, 300, size=stats.m)
        stats.means[:] = rng.dirichlet(np.ones(mdp.S), size=stats.m)
        res = optimistic_value_iteration(stats, mdp.rewards, T)
        L = LogTerm.union_bound(mdp.S * mdp.A * mdp.H * T, default_delta_variance(T)).value
        p_hat = stats.means.reshape(mdp.H, mdp.S, mdp.A, mdp.S)
        counts = stats.counters.reshape(mdp.H, mdp.S, mdp.A)
        for h in range(mdp.H):
            v_next = res.v_upper[h + 1]
            phi = variance_aware_bonus_rows(p_hat[h].reshape(-1, mdp.S), v_next,
                                            res.v_lower[h + 1], counts[h].ravel(), L, mdp.H)
            lhs = res.transitions[h].reshape(-1, mdp.S) @ v_next
            rhs = np.minimum(p_hat[h].reshape(-1, mdp.S) @ v_next + phi, v_next.max())
            assert np.allclose(lhs, rhs, atol=1e-10)
            assert np.allclose(res.transitions[h].sum(axis=-1), 1.0)
            assert res.transitions[h].min() >= -1e-12


def test_oracles_emit_diagnostics_for_audit():
    mdp = random_mdp(2, 2, 2, seed=0)
    stats = ArmStatistics(8, 2)
    p = OptimisticVIOracle(mdp.rewards, 10).propose(stats, 1)
    assert {"v_upper", "v_lower", "radius"} <= set(p.diagnostics)
    p = ExtendedVIOracle(mdp.rewards, 10).propose(stats, 1)
    assert np.isinf(p.diagnostics["radius"]).all()


# -- smoothness and performance difference ---------------------------------

def test_smoothness_terms_identity_and_single_state(rng):
    mdp = random_mdp(3, 2, 3, seed=0)
    pi = rng.integers(0, 2, size=(3, 3))
    assert mtpm_bound_terms(mdp, mdp.transitions, pi) == pytest.approx((0, 0, 0), abs=1e-15)
    single = chain_mdp([0.2, 0.4, 0.9])
    assert mtpm_bound_terms(single, single.transitions, np.zeros((3, 1), dtype=int)) == (0, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_smoothness_chain_holds(seed):
    r = np.random.default_rng(seed)
    mdp = random_mdp(3, 2, 3, seed)
    p_tilde = r.dirichlet(np.ones(3), size=(3, 3, 2))
    t = mtpm_bound_terms(mdp, p_tilde, r.integers(0, 2, size=(3, 3)))
    assert t.lhs <= t.rhs_tight + 1e-12 <= t.rhs_loose + 2e-12


def test_performance_difference():
    rng = np.random.default_rng(4)
    for seed in range(30):
        mdp = random_mdp(3, 2, 3, seed)
        V, pi_star = optimal_values(mdp)
        assert performance_difference(mdp, V, pi_star) == pytest.approx(0, abs=1e-12)
        pi = rng.integers(0, 2, size=(3, 3))
        direct = V[0, 0] - value_of_policy(mdp, pi)[0, 0]
        assert performance_difference(mdp, V, pi) == pytest.approx(direct, abs=1e-10)
    one = random_mdp(3, 2, 1, seed=9)
    V, _ = optimal_values(one)
    assert performance_difference(one, V, [[1, 0, 0]]) == pytest.approx(
        V[0, 0] - one.rewards[0, 0, 1])


# -- environment and files -------------------------------------------------

def test_environment_regret_is_exact():
    mdp = random_mdp(3, 2, 3, seed=15)
    env = EpisodicEnvironment(mdp)
    trace = run_cucb_mt(env, ExtendedVIOracle(mdp.rewards, 50), 50, seed=3,
                        keep_observations=False)
    for rec in trace:
        pi = np.array([int(c) for c in rec.action_id]).reshape(3, 3)
        expected = env.optimal_value - value_of_policy(mdp, pi)[0, 0]
        assert rec.instant_regret == pytest.approx(expected, abs=1e-12)


def test_mdp_file_round_trip(tmp_path):
    mdp = random_mdp(3, 2, 4, seed=11, initial_state=2)
    path = tmp_path / "m.txt"
    write_mdp(mdp, path)
    back = read_mdp(path)
    assert np.array_equal(back.transitions, mdp.transitions)
    assert np.array_equal(back.rewards, mdp.rewards)
    assert back.initial_state == 2


def test_mdp_file_comments_and_errors(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("# tiny\n1 1 1 0\n0.25  # reward\n1.0\n")
    mdp = read_mdp(path)
    assert mdp.rewards[0, 0, 0] == 0.25
    path.write_text("1 1 1 0\n0.25\n")
    with pytest.raises(ValueError):
        read_mdp(path)
