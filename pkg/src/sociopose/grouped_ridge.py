"""Banded (grouped) ridge with random search over group weights.

Each feature group ``g`` is scaled by ``sqrt(gamma_g)`` before an ordinary
ridge fit with one shared alpha, which is the same model as kernel ridge on
``sum_g gamma_g X_g X_g'``. Candidate weight vectors ``gamma`` are drawn
from symmetric Dirichlet distributions on the simplex, and the uniform
weighting is always candidate 0.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ridge import (
    DEFAULT_ALPHAS,
    EncodingScore,
    check_disjoint,
    columnwise_r,
    kernel_path_predictions,
    make_fold_plan,
    path_predictions,
    pearson_r,
    pick_best,
    ridge_fit,
    zscore_fit,
)
from .seeding import rng_for


@dataclass(frozen=True)
class GammaCandidate:
    gamma: tuple
    source_concentration: float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim != 1 or g.size < 1 or np.any(g < 0) or abs(g.sum() - 1) > 1e-12:
            raise ValueError(f"gamma must lie on the simplex, got {self.gamma}")
        object.__setattr__(self, "gamma", tuple(float(v) for v in g))


@dataclass(frozen=True)
class GroupedSearchConfig:
    n_candidates: int = 200
    concentrations: tuple = (0.1, 1.0)
    alpha_grid: tuple = DEFAULT_ALPHAS
    n_folds: int = 5
    n_repeats: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "concentrations", tuple(float(c) for c in self.concentrations))
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if not self.concentrations or any(c <= 0 for c in self.concentrations):
            raise ValueError("concentrations must all be > 0")


def _normalize(g):
    return g / g.sum()


def sample_gammas(cfg, n_groups):
    """Uniform candidate followed by ``cfg.n_candidates`` Dirichlet draws.

    Draws are split as evenly as possible across ``cfg.concentrations``.
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    rng = rng_for(cfg.seed, "gammas", n_groups)
    out = [GammaCandidate(tuple(np.full(n_groups, 1.0 / n_groups)), math.inf)]
    for conc, chunk in zip(
        cfg.concentrations, np.array_split(np.arange(cfg.n_candidates), len(cfg.concentrations))
    ):
        for _ in chunk:
            g = rng.dirichlet(np.full(n_groups, conc))
            while not (np.all(np.isfinite(g)) and g.sum() > 0):
                g = rng.dirichlet(np.full(n_groups, conc))
            out.append(GammaCandidate(tuple(_normalize(g)), conc))
    return out


def _as_groups(named_groups):
    groups = [(str(gid), np.asarray(X, dtype=float)) for gid, X in named_groups]
    if not groups:
        raise DataError("grouped ridge needs at least one feature group")
    n = groups[0][1].shape[0]
    for gid, X in groups:
        if X.ndim != 2 or X.shape[0] != n or X.shape[1] < 1:
            raise DataError(f"group {gid!r} has shape {X.shape}, expected ({n}, >=1)")
    return groups


def scaled_design(groups, gamma):
    return np.hstack([np.sqrt(g) * X for g, X in zip(gamma, groups)])


def grouped_fit(groups, Y, gamma, alpha):
    """Ridge weights on the sqrt(gamma)-scaled concatenation of standardized groups."""
    gamma = gamma.gamma if isinstance(gamma, GammaCandidate) else tuple(gamma)
    if len(gamma) != len(groups):
        raise DataError(f"{len(gamma)} weights for {len(groups)} groups")
    return ridge_fit(scaled_design(groups, gamma), Y, alpha)


@dataclass
class GroupedRidgeModel:
    group_ids: list
    group_stats: list
    target_stats: object
    gammas: list  # per target column
    alphas: list
    weights: list  # per target column, (D,) on the scaled design

    def predict(self, groups):
        """Standardized-unit predictions for raw (unstandardized) group matrices."""
        Xs = [s.apply(np.asarray(X, dtype=float)) for s, X in zip(self.group_stats, groups)]
        cols = [scaled_design(Xs, g.gamma) @ w for g, w in zip(self.gammas, self.weights)]
        return np.column_stack(cols)


def fit_grouped_model(named_groups, Y, gammas, alphas):
    """Standardize on these rows and fit one (gamma, alpha) pair per target."""
    groups = _as_groups(named_groups)
    Y = np.asarray(Y, dtype=float)
    stats = [zscore_fit(X) for _, X in groups]
    ys = zscore_fit(Y)
    Xs = [s.apply(X) for s, (_, X) in zip(stats, groups)]
    Ys = ys.apply(Y)
    weights = []
    cache = {}
    for j, (g, a) in enumerate(zip(gammas, alphas)):
        key = (g.gamma, a)
        if key not in cache:
            cache[key] = grouped_fit(Xs, Ys, g, a)
        weights.append(cache[key][:, j])
    return GroupedRidgeModel([gid for gid, _ in groups], stats, ys, list(gammas), list(alphas), weights)


@dataclass
class GroupedSearchResult:
    gammas: list
    alphas: list
    cv_r: list
    candidates: list
    model: GroupedRidgeModel = None
    table: dict = field(repr=False, default_factory=dict)


def grouped_cv_scores(groups, Y, candidates, plan, alphas):
    """Mean validation r per candidate, each (n_alpha, t)."""
    total = {i: np.zeros((len(alphas), Y.shape[1])) for i in range(len(candidates))}
    n_splits = 0
    width = sum(X.shape[1] for X in groups)
    for train, val in plan.splits():
        stats = [zscore_fit(X[train]) for X in groups]
        Xt = [s.apply(X[train]) for s, X in zip(stats, groups)]
        Xv = [s.apply(X[val]) for s, X in zip(stats, groups)]
        ys = zscore_fit(Y[train])
        Yt, Yv = ys.apply(Y[train]), ys.apply(Y[val])
        use_kernel = width > len(train)
        if use_kernel:
            Ktt = [X @ X.T for X in Xt]
            Kvt = [V @ X.T for V, X in zip(Xv, Xt)]
        for i, cand in enumerate(candidates):
            if use_kernel:
                K = np.zeros_like(Ktt[0])
                Kv = np.zeros_like(Kvt[0])
                for g, A, B in zip(cand.gamma, Ktt, Kvt):
                    K += g * A
                    Kv += g * B
                preds = kernel_path_predictions(K, Kv, Yt, alphas)
            else:
                preds = path_predictions(
                    scaled_design(Xt, cand.gamma), scaled_design(Xv, cand.gamma), Yt, alphas
                )
            total[i] += columnwise_r(preds, Yv[None])[0]
        n_splits += 1
    return {i: v / n_splits for i, v in total.items()}


def grouped_search(named_groups, Y_train, cfg=GroupedSearchConfig(), plan=None, candidates=None):
    """Random search over gamma candidates x alpha grid, per target column.

    Ties go to the smaller alpha, then the lower candidate index. The winning
    pairs are refit on all of ``Y_train``'s rows.
    """
    groups = _as_groups(named_groups)
    Y = np.asarray(Y_train, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    mats = [X for _, X in groups]
    if Y.shape[0] != mats[0].shape[0]:
        raise DataError("groups and targets are not row-aligned")
    if Y.shape[0] < 2 * cfg.n_folds:
        raise DataError(f"grouped search needs >= {2 * cfg.n_folds} training rows")
    if candidates is None:
        candidates = sample_gammas(cfg, len(groups))
    if plan is None:
        plan = make_fold_plan(Y.shape[0], cfg.n_folds, cfg.n_repeats, cfg.seed)
    table = grouped_cv_scores(mats, Y, candidates, plan, cfg.alpha_grid)
    winners = pick_best(table, cfg.alpha_grid, range(len(candidates)))
    gammas = [candidates[w[0]] for w in winners]
    alphas = [w[1] for w in winners]
    model = fit_grouped_model(groups, Y, gammas, alphas)
    return GroupedSearchResult(gammas, alphas, [float(w[2]) for w in winners], candidates, model, table)


def grouped_evaluate(
    model,
    test_groups,
    Y_test,
    rating_dims,
    feature_set_id="grouped",
    layer_id="",
    train_ids=None,
    test_ids=None,
):
    check_disjoint(train_ids, test_ids)
    Y_test = np.asarray(Y_test, dtype=float)
    if Y_test.ndim == 1:
        Y_test = Y_test[:, None]
    pred = model.predict([X for _, X in _as_groups(test_groups)])
    out = []
    for j, dim in enumerate(rating_dims):
        r, degenerate = pearson_r(pred[:, j], Y_test[:, j], return_flag=True)
        out.append(
            EncodingScore(
                feature_set_id, layer_id, dim, float(model.alphas[j]), r, len(Y_test),
                degenerate, model.gammas[j].gamma,
            )
        )
    return out
