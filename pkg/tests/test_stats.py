import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import paired_exact_p, pearson, unpaired_exact_p
from sociopose.errors import DataError
from sociopose.ridge import RidgeConfig, cv_select, evaluate
from sociopose.stats import (
    delta_r,
    perm_test_paired,
    perm_test_unpaired,
    residualize,
    score_relationship,
    semipartial,
    split_half_reliability,
)

small_scores = st.lists(st.integers(-5, 5).map(lambda v: v / 4), min_size=1, max_size=4)


def test_unpaired_exhaustive_example():
    res = perm_test_unpaired([1, 1], [0, 0])
    assert res.exhaustive and res.n_permutations == 6
    assert res.p_value == 2 / 6 and res.observed == 1.0


def test_unpaired_constant_groups():
    res = perm_test_unpaired([3, 3, 3], [3, 3])
    assert res.observed == 0 and res.p_value == 1.0


def test_paired_exhaustive_example():
    res = perm_test_paired([-1, -1])
    assert res.exhaustive and res.n_permutations == 4 and res.p_value == 0.25


def test_paired_all_zero():
    assert perm_test_paired([0, 0, 0]).p_value == 1.0


def test_empty_inputs():
    with pytest.raises(DataError):
        perm_test_unpaired([], [1])
    with pytest.raises(DataError):
        perm_test_paired([])


@settings(max_examples=60, deadline=None)
@given(small_scores, small_scores)
def test_unpaired_exhaustive_matches_enumeration(a, b):
    res = perm_test_unpaired(a, b, mode="exhaustive")
    assert res.p_value == unpaired_exact_p(a, b)
    assert res.n_permutations == math.comb(len(a) + len(b), len(a))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5).map(lambda v: v / 8), min_size=1, max_size=8))
def test_paired_exhaustive_matches_enumeration(d):
    res = perm_test_paired(d, mode="exhaustive")
    assert res.p_value == paired_exact_p(d)
    assert res.n_permutations == 2 ** len(d)


@settings(max_examples=40, deadline=None)
@given(small_scores, small_scores)
def test_unpaired_symmetry(a, b):
    x, y = perm_test_unpaired(a, b, mode="exhaustive"), perm_test_unpaired(b, a, mode="exhaustive")
    assert x.observed == -y.observed and x.p_value == y.p_value


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-5, 5).map(lambda v: v / 8), min_size=1, max_size=8))
def test_paired_complementarity(d):
    # negating every diff turns "<= observed" into ">= observed"
    neg = perm_test_paired([-v for v in d], mode="exhaustive")
    obs = sum(d) / len(d)
    ge = 0
    for signs in itertools.product((1, -1), repeat=len(d)):
        ge += sum(s * v for s, v in zip(signs, d)) / len(d) >= obs - 1e-12 * max(1, abs(obs))
    assert neg.p_value == ge / 2 ** len(d)


def test_sampled_converges_to_exhaustive():
    tol = 2 / math.sqrt(5000)
    for seed in range(3):
        u = perm_test_unpaired([1, 1], [0, 0], n_perm=5000, seed=seed, mode="sampled")
        p = perm_test_paired([-1, -1], n_perm=5000, seed=seed, mode="sampled")
        assert not u.exhaustive and u.n_permutations == 5000
        assert abs(u.p_value - 1 / 3) <= tol and abs(p.p_value - 1 / 4) <= tol


def test_seeded_and_thread_invariant():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=12), rng.normal(size=14)
    r1 = perm_test_unpaired(a, b, n_perm=2345, seed=5)
    r2 = perm_test_unpaired(a, b, n_perm=2345, seed=5, n_jobs=4)
    r3 = perm_test_unpaired(a, b, n_perm=2345, seed=6)
    assert r1.p_value == r2.p_value and r1.null_mean == r2.null_mean
    assert r1.null_mean != r3.null_mean
    d = rng.normal(size=20)
    assert perm_test_paired(d, seed=1).p_value == perm_test_paired(d, seed=1, n_jobs=3).p_value


def test_auto_mode_switch():
    assert perm_test_unpaired(range(6), range(6), n_perm=5000).exhaustive  # C(12,6)=924
    assert not perm_test_unpaired(range(8), range(8), n_perm=5000).exhaustive  # 12870
    assert perm_test_paired(np.ones(12), n_perm=5000).exhaustive
    assert not perm_test_paired(np.ones(13), n_perm=5000).exhaustive


def test_semipartial_self_control_collapses():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 6))
    Y = X @ rng.normal(size=(6, 2)) + 0.3 * rng.normal(size=(120, 2))
    res = semipartial(X, X, Y, np.arange(90), np.arange(90, 120))
    assert max(abs(r) for r in res.r_semi) < 0.1


def test_semipartial_empty_control_is_plain_r():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 5))
    Y = X @ rng.normal(size=(5, 2)) + rng.normal(size=(100, 2))
    tr, te = np.arange(75), np.arange(75, 100)
    res = semipartial(np.zeros((100, 0)), X, Y, tr, te, rating_dims=("a", "b"))
    sel = cv_select([("x", X[tr])], Y[tr], RidgeConfig())
    plain = evaluate(X[tr], Y[tr], X[te], Y[te], sel.alphas, ("a", "b"))
    assert res.r_semi == tuple(s.r_test for s in plain)


def test_semipartial_independent_control():
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(150, 5))
        C = rng.normal(size=(150, 3))
        Y = X @ rng.normal(size=(5, 1)) + 0.7 * rng.normal(size=(150, 1))
        tr, te = np.arange(110), np.arange(110, 150)
        res = semipartial(C, X, Y, tr, te)
        sel = cv_select([("x", X[tr])], Y[tr], RidgeConfig())
        plain = evaluate(X[tr], Y[tr], X[te], Y[te], sel.alphas, ("y0",))[0].r_test
        gaps.append(res.r_semi[0] - plain)
    assert abs(np.mean(gaps)) < 0.05


def test_residualize_uses_training_rows_only():
    rng = np.random.default_rng(5)
    C, X = rng.normal(size=(50, 2)), rng.normal(size=(50, 4))
    tr, te = np.arange(40), np.arange(40, 50)
    r1, a1, _ = residualize(C, X, tr, te)
    C2, X2 = C.copy(), X.copy()
    C2[te] *= 50
    X2[te] += 9
    r2, a2, _ = residualize(C2, X2, tr, te)
    assert a1 == a2
    np.testing.assert_array_equal(r1[tr], r2[tr])


def test_reliability_identical_raters():
    base = np.random.default_rng(6).normal(size=40)
    res = split_half_reliability(np.tile(base[:, None], (1, 6)), n_splits=20)
    assert res.r_split_half == pytest.approx(1.0, abs=1e-12) and res.n_splits == 20


def test_reliability_noise_raters():
    R = np.random.default_rng(7).normal(size=(50, 8))
    res = split_half_reliability(R, n_splits=100, seed=1)
    assert abs(res.r_split_half) < 0.3


def test_reliability_two_raters_one_split():
    R = np.random.default_rng(8).normal(size=(30, 2))
    r = pearson(R[:, 0], R[:, 1])
    res = split_half_reliability(R, n_splits=1)
    assert res.r_split_half == pytest.approx(2 * r / (1 + r), abs=1e-12)
    raw = split_half_reliability(R, n_splits=1, spearman_brown=False)
    assert raw.r_split_half == pytest.approx(r, abs=1e-12)


def test_reliability_missing_entries():
    rng = np.random.default_rng(9)
    R = rng.normal(size=(30, 5)) + rng.normal(size=(30, 1)) * 3
    R[0, 1:] = np.nan
    R[3, 2] = np.nan
    res = split_half_reliability(R, n_splits=30)
    assert res.n_clips == 29 and -1 <= res.r_split_half <= 1
    with pytest.raises(DataError):
        split_half_reliability(np.full((4, 3), np.nan))


def test_delta_and_relationship():
    np.testing.assert_array_equal(delta_r([0.1, 0.2], [0.1, 0.2]), [0, 0])
    assert delta_r([0.5], [0.2])[0] == pytest.approx(0.3)
    assert score_relationship([(0, 1), (1, 3), (2, 5)]) == pytest.approx(1.0)
    pairs = [(0.1, 0.3), (0.4, 0.2), (0.35, 0.5), (0.6, 0.55)]
    assert score_relationship(pairs) == pytest.approx(pearson(*zip(*pairs)), abs=1e-14)
    with pytest.raises(DataError):
        score_relationship([(1, 2)])
    with pytest.raises(DataError):
        delta_r([1, 2], [1])
