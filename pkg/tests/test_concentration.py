import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmabmt import concentration as conc
from cmabmt.framework import INFINITE_RADIUS


def test_l1_radius_examples():
    assert conc.l1_multinoulli_radius(2, 8, 2.0) == pytest.approx(1.0)
    assert conc.l1_multinoulli_radius(5, 0, 1.0) == INFINITE_RADIUS


def test_bernstein_examples():
    assert conc.bernstein_entry_radius(0.0, 10, 3.0) == pytest.approx(0.3)
    assert conc.bernstein_entry_radius(0.5, 4, 1.0) == pytest.approx(0.5)
    assert conc.bernstein_entry_radius(0.5, 0, 1.0) == INFINITE_RADIUS


def test_empirical_variance_examples():
    assert conc.empirical_variance([1, 0], [3, 7]) == 0
    assert conc.empirical_variance([0.5, 0.5], [0, 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        conc.empirical_variance([0.5, 0.6], [0, 1])
    with pytest.raises(ValueError):
        conc.empirical_variance([1.5, -0.5], [0, 1])


def two_pass_variance(p, v):
    mean = sum(pi * vi for pi, vi in zip(p, v))
    return sum(pi * (vi - mean) ** 2 for pi, vi in zip(p, v))


def test_variance_matches_two_pass(rng):
    for _ in range(200):
        p = rng.dirichlet(np.ones(4))
        v = rng.uniform(0, 3, 4)
        assert conc.empirical_variance(p, v) == pytest.approx(two_pass_variance(p, v), abs=1e-12)


def test_bonus_examples():
    H, L, n = 3.0, 2.0, 7
    assert conc.variance_aware_bonus([0.2, 0.8], [1.5, 1.5], [1.5, 1.5], n, L, H) == \
        pytest.approx(5 * H * L / n, abs=1e-15)
    assert conc.variance_aware_bonus([0.5, 0.5], [0, 2], [0, 2], 1, 1.0, 2) == pytest.approx(12)
    assert conc.variance_aware_bonus([0.5, 0.5], [0, 2], [0, 2], 0, 1.0, 2) == INFINITE_RADIUS


def scalar_bonus(p, vu, vl, n, L, H):
    mean = sum(a * b for a, b in zip(p, vu))
    var = sum(a * (b - mean) ** 2 for a, b in zip(p, vu))
    gap = sum(a * (b - c) ** 2 for a, b, c in zip(p, vu, vl))
    return 2 * math.sqrt(var * L / n) + 2 * math.sqrt(gap * L / n) + 5 * H * L / n


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.integers(1, 500), st.floats(0.1, 20), st.integers(1, 5),
       st.integers(0, 2**32 - 1))
def test_bonus_matches_scalar_formula(S, n, L, H, seed):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(S))
    vl = r.uniform(0, H, S)
    vu = vl + r.uniform(0, 1, S)
    expected = scalar_bonus(p, vu, vl, n, L, H)
    assert conc.variance_aware_bonus(p, vu, vl, n, L, H) == pytest.approx(expected, abs=1e-12)
    rows = conc.variance_aware_bonus_rows(p[None], vu, vl, np.array([n]), L, H)
    assert rows[0] == pytest.approx(expected, abs=1e-12)


def test_bonus_rows_infinite_for_unseen():
    b = conc.variance_aware_bonus_rows(np.zeros((2, 3)), np.ones(3), np.zeros(3),
                                       np.array([0, 4]), 1.0, 2.0)
    assert b[0] == INFINITE_RADIUS and np.isfinite(b[1])


def test_log_term():
    assert conc.LogTerm.union_bound(10, 0.1).value == pytest.approx(math.log(100))
    with pytest.raises(ValueError):
        conc.LogTerm(-1.0)


@pytest.mark.parametrize("result", [
    conc.l1_coverage([0.3, 0.7], 50, 0.05, 10_000, 0),
    conc.bernstein_coverage(0.2, 100, 0.05, 10_000, 1),
    conc.future_value_coverage([0.2, 0.5, 0.3], [0.0, 1.0, 2.5], 50, 3, 0.05, 10_000, 2),
], ids=lambda r: r.name)
def test_coverage_within_delta(result):
    assert result.rate <= 0.05
    assert result.passed


def test_coverage_threshold_is_delta_plus_two_se():
    r = conc.CoverageResult("x", trials=10_000, violations=600, delta=0.05)
    assert r.threshold == pytest.approx(0.05 + 2 * math.sqrt(0.05 * 0.95 / 10_000))
    assert not r.passed
    assert conc.CoverageResult("x", 10_000, 500, 0.05).passed
