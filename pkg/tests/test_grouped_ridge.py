import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sociopose.errors import DataError, LeakageError
from sociopose.grouped_ridge import (
    GammaCandidate,
    GroupedSearchConfig,
    grouped_evaluate,
    grouped_fit,
    grouped_search,
    sample_gammas,
    scaled_design,
)
from sociopose.ridge import DEFAULT_ALPHAS, RidgeConfig, cv_select, make_fold_plan, ridge_fit

SMALL = GroupedSearchConfig(n_candidates=20, seed=1)


def test_candidate_count_and_uniform_first():
    c = sample_gammas(GroupedSearchConfig(), 2)
    assert len(c) == 201
    assert c[0].gamma == (0.5, 0.5) and math.isinf(c[0].source_concentration)
    conc = [x.source_concentration for x in c[1:]]
    assert conc.count(0.1) == 100 and conc.count(1.0) == 100


def test_one_group_candidates():
    assert all(c.gamma == (1.0,) for c in sample_gammas(SMALL, 1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_simplex_and_determinism(n_groups, seed, n):
    cfg = GroupedSearchConfig(n_candidates=n, seed=seed)
    a, b = sample_gammas(cfg, n_groups), sample_gammas(cfg, n_groups)
    assert [x.gamma for x in a] == [x.gamma for x in b]
    for x in a:
        assert abs(sum(x.gamma) - 1) < 1e-12 and min(x.gamma) >= 0


def test_concentration_controls_sparsity():
    c = sample_gammas(GroupedSearchConfig(n_candidates=200, seed=3), 4)
    sparse = np.mean([max(x.gamma) for x in c if x.source_concentration == 0.1])
    dense = np.mean([max(x.gamma) for x in c if x.source_concentration == 1.0])
    assert sparse > dense


def test_candidate_validation():
    with pytest.raises(ValueError):
        GammaCandidate((0.5, 0.6), 1.0)
    with pytest.raises(ValueError):
        GammaCandidate((1.2, -0.2), 1.0)
    with pytest.raises(ValueError):
        GroupedSearchConfig(n_candidates=0)
    with pytest.raises(ValueError):
        GroupedSearchConfig(concentrations=(0.0,))


def test_single_group_reduces_to_ridge():
    rng = np.random.default_rng(0)
    X, Y, Xv = rng.normal(size=(20, 6)), rng.normal(size=(20, 2)), rng.normal(size=(5, 6))
    for a in DEFAULT_ALPHAS:
        W = grouped_fit([X], Y, GammaCandidate((1.0,), 1.0), a)
        np.testing.assert_allclose(Xv @ W, Xv @ ridge_fit(X, Y, a), rtol=0, atol=1e-10)


def test_zero_weight_group_has_no_influence():
    rng = np.random.default_rng(1)
    A, B, Y = rng.normal(size=(15, 3)), rng.normal(size=(15, 4)), rng.normal(size=(15, 1))
    W = grouped_fit([A, B], Y, (1.0, 0.0), 1.0)
    Av, Bv = rng.normal(size=(4, 3)), rng.normal(size=(4, 4))
    p1 = scaled_design([Av, Bv], (1.0, 0.0)) @ W
    p2 = scaled_design([Av, 100 * Bv], (1.0, 0.0)) @ W
    np.testing.assert_array_equal(p1, p2)


def test_duplicate_groups_identity():
    rng = np.random.default_rng(2)
    X, Y, Xv = rng.normal(size=(25, 5)), rng.normal(size=(25, 2)), rng.normal(size=(6, 5))
    for a in DEFAULT_ALPHAS[5:]:
        W2 = grouped_fit([X, X], Y, (0.5, 0.5), a)
        W1 = grouped_fit([X], Y, (1.0,), a)
        np.testing.assert_allclose(scaled_design([Xv, Xv], (0.5, 0.5)) @ W2, Xv @ W1, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_scale_absorption(c, g, seed):
    rng = np.random.default_rng(seed)
    A, B, Y = rng.normal(size=(12, 3)), rng.normal(size=(12, 20)), rng.normal(size=(12, 1))
    Av, Bv = rng.normal(size=(4, 3)), rng.normal(size=(4, 20))
    gamma = (g, 1 - g)
    base = scaled_design([Av, Bv], gamma) @ grouped_fit([A, B], Y, gamma, 1.0)
    gamma2 = (g, (1 - g) / c**2)
    scaled = scaled_design([Av, c * Bv], gamma2) @ grouped_fit([A, c * B], Y, gamma2, 1.0)
    np.testing.assert_allclose(scaled, base, atol=1e-8)


def test_single_group_search_equals_ridge_cv():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 5))
    Y = X @ rng.normal(size=(5, 2)) + rng.normal(size=(40, 2))
    plan = make_fold_plan(40, 5, 2, 7)
    res = grouped_search([("g", X)], Y, SMALL, plan=plan)
    sel = cv_select([("g", X)], Y, RidgeConfig(), plan=plan)
    np.testing.assert_allclose(res.cv_r, sel.cv_r, atol=1e-10)
    assert res.alphas == sel.alphas


def test_one_candidate_one_alpha():
    rng = np.random.default_rng(5)
    A, B, Y = rng.normal(size=(20, 2)), rng.normal(size=(20, 3)), rng.normal(size=(20, 1))
    cand = [GammaCandidate((0.3, 0.7), 1.0)]
    cfg = GroupedSearchConfig(n_candidates=1, alpha_grid=(3.0,))
    res = grouped_search([("a", A), ("b", B)], Y, cfg, candidates=cand)
    assert res.gammas[0].gamma == (0.3, 0.7) and res.alphas == [3.0]


def test_search_needs_rows():
    with pytest.raises(DataError):
        grouped_search([("a", np.ones((9, 2)))], np.ones((9, 1)), SMALL)


def test_kernel_and_primal_paths_agree():
    from sociopose.grouped_ridge import grouped_cv_scores

    rng = np.random.default_rng(6)
    A, B = rng.normal(size=(30, 10)), rng.normal(size=(30, 30))
    Y = rng.normal(size=(30, 2))
    plan = make_fold_plan(30, 5, 1, 0)
    cands = sample_gammas(SMALL, 2)[:5]
    wide = grouped_cv_scores([A, B], Y, cands, plan, DEFAULT_ALPHAS[8:])
    # reference: direct fits on the scaled design for each fold
    for i, cand in enumerate(cands):
        ref = np.zeros_like(wide[i])
        for tr, va in plan.splits():
            mats = []
            for X in (A, B):
                m, s = X[tr].mean(0), X[tr].std(0)
                mats.append(((X[tr] - m) / s, (X[va] - m) / s))
            my, sy = Y[tr].mean(0), Y[tr].std(0)
            Xt = scaled_design([m[0] for m in mats], cand.gamma)
            Xv = scaled_design([m[1] for m in mats], cand.gamma)
            for k, a in enumerate(DEFAULT_ALPHAS[8:]):
                pred = Xv @ ridge_fit(Xt, (Y[tr] - my) / sy, a)
                yv = (Y[va] - my) / sy
                ref[k] += [np.corrcoef(pred[:, j], yv[:, j])[0, 1] for j in range(2)]
        np.testing.assert_allclose(wide[i], ref / 5, atol=1e-8)


def planted(seed, n=120, n_test=60):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n + n_test, 4))
    B = rng.normal(size=(n + n_test, 16))
    y = A @ rng.normal(size=4) + 0.5 * rng.normal(size=n + n_test)
    return A, B, y[:, None], n


def test_planted_signal_prefers_informative_group():
    wins = 0
    for seed in range(20):
        A, B, Y, n = planted(seed)
        res = grouped_search([("info", A[:n]), ("noise", B[:n])], Y[:n], GroupedSearchConfig(n_candidates=40, seed=seed))
        wins += res.gammas[0].gamma[0] > 0.5
    assert wins >= 18


def test_grouped_evaluate_and_guard():
    A, B, Y, n = planted(0)
    res = grouped_search([("info", A[:n]), ("noise", B[:n])], Y[:n], SMALL)
    (s,) = grouped_evaluate(res.model, [("info", A[n:]), ("noise", B[n:])], Y[n:], ["y"])
    assert s.r_test > 0.8 and s.gamma == res.gammas[0].gamma and s.n_test == 60
    with pytest.raises(LeakageError):
        grouped_evaluate(res.model, [("info", A[n:]), ("noise", B[n:])], Y[n:], ["y"],
                         train_ids=["a"], test_ids=["a"])


def test_noise_model_scores_small():
    rs = []
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X, Y = rng.normal(size=(180, 6)), rng.normal(size=(180, 1))
        res = grouped_search([("n", X[:130])], Y[:130], SMALL)
        rs.append(grouped_evaluate(res.model, [("n", X[130:])], Y[130:], ["y"])[0].r_test)
    assert np.mean(np.abs(rs)) < 0.25
