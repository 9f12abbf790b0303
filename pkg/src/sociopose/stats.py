"""Permutation tests, semi-partial correlation, split-half reliability.

p-values are plain proportions of the null draws at least as extreme as the
observed statistic (no +1 correction). When the full set of label
assignments is no larger than the requested number of permutations it is
enumerated exactly instead of sampled.
"""
import itertools
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ridge import (
    RidgeConfig,
    check_disjoint,
    cv_select,
    evaluate,
    make_fold_plan,
    path_predictions,
    pearson_r,
    ridge_fit,
    zscore_fit,
)

logger = logging.getLogger(__name__)

BATCH_SIZE = 500
# relative slack so that a permutation reproducing the observed statistic
# with different round-off still counts as "as extreme"
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PermTestResult:
    observed: float
    p_value: float
    n_permutations: int
    tail: str  # "two_sided" or "one_sided_leq"
    seed: int
    exhaustive: bool
    n_extreme: int
    null_mean: float
    null_std: float


def _batch_rng(seed, batch):
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, batch]))


def _run_batches(n_perm, worker, n_jobs):
    sizes = [min(BATCH_SIZE, n_perm - s) for s in range(0, n_perm, BATCH_SIZE)]
    jobs = list(enumerate(sizes))
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(lambda j: worker(*j), jobs))
    else:
        parts = [worker(*j) for j in jobs]
    return np.concatenate(parts)


def _finish(observed, null, tail, seed, exhaustive):
    slack = _TIE_RTOL * max(abs(observed), 1.0)
    if tail == "two_sided":
        extreme = np.abs(null) >= abs(observed) - slack
    else:
        extreme = null <= observed + slack
    n_extreme = int(extreme.sum())
    return PermTestResult(
        float(observed), n_extreme / null.size, int(null.size), tail, seed, exhaustive,
        n_extreme, float(null.mean()), float(null.std()),
    )


def perm_test_unpaired(scores_a, scores_b, n_perm=5000, seed=0, mode="auto", n_jobs=None):
    """Two-tailed test on the difference of group means.

    ``mode`` is ``"auto"`` (exhaustive when the number of label assignments
    is at most ``n_perm``), ``"exhaustive"`` or ``"sampled"``.
    """
    a = np.asarray(scores_a, dtype=float).ravel()
    b = np.asarray(scores_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("both groups need at least one score")
    pooled = np.concatenate([a, b])
    n, na = pooled.size, a.size
    observed = a.mean() - b.mean()
    n_assign = math.comb(n, na)
    exhaustive = mode == "exhaustive" or (mode == "auto" and n_assign <= n_perm)
    if exhaustive:
        mask = np.zeros((n_assign, n), dtype=bool)
        for i, idx in enumerate(itertools.combinations(range(n), na)):
            mask[i, list(idx)] = True
        null = _group_diff(pooled, mask, na)
        return _finish(observed, null, "two_sided", seed, True)

    def worker(batch, size):
        rng = _batch_rng(seed, batch)
        order = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
        mask = np.zeros((size, n), dtype=bool)
        np.put_along_axis(mask, order[:, :na], True, axis=1)
        return _group_diff(pooled, mask, na)

    null = _run_batches(n_perm, worker, n_jobs)
    return _finish(observed, null, "two_sided", seed, False)


def _group_diff(pooled, mask, na):
    nb = pooled.size - na
    sa = mask @ pooled
    return sa / na - (pooled.sum() - sa) / nb


def perm_test_paired(diffs, n_perm=5000, seed=0, mode="auto", n_jobs=None):
    """One-tailed paired test: p = share of sign-flipped means <= observed mean.

    Swapping the two scores of a pair negates its difference, so the null
    flips each sign independently.
    """
    d = np.asarray(diffs, dtype=float).ravel()
    if d.size == 0:
        raise DataError("paired test needs at least one pair")
    observed = d.mean()
    exhaustive = mode == "exhaustive" or (mode == "auto" and 2**d.size <= n_perm)
    if exhaustive:
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=d.size)))
        return _finish(observed, signs @ d / d.size, "one_sided_leq", seed, True)

    def worker(batch, size):
        rng = _batch_rng(seed, batch)
        signs = np.where(rng.random((size, d.size)) < 0.5, -1.0, 1.0)
        return signs @ d / d.size

    null = _run_batches(n_perm, worker, n_jobs)
    return _finish(observed, null, "one_sided_leq", seed, False)


@dataclass(frozen=True)
class SemiPartialResult:
    control_id: str
    rating_dims: tuple
    r_semi: tuple
    alpha_residualizer: float
    alpha_predictor: tuple
    degenerate: tuple


def _select_residualizer_alpha(Xc, Xf, cfg):
    """Alpha minimizing the mean validation MSE of the standardized full features."""
    plan = make_fold_plan(Xc.shape[0], cfg.n_folds, cfg.n_repeats, cfg.seed)
    err = np.zeros(len(cfg.alpha_grid))
    for train, val in plan.splits():
        cs = zscore_fit(Xc[train])
        fs = zscore_fit(Xf[train])
        pred = path_predictions(cs.apply(Xc[train]), cs.apply(Xc[val]), fs.apply(Xf[train]), cfg.alpha_grid)
        err += ((pred - fs.apply(Xf[val])[None]) ** 2).mean(axis=(1, 2))
    # first minimum wins, i.e. the smaller alpha on ties
    return cfg.alpha_grid[int(np.argmin(err))]


def residualize(X_control, X_full, train, test, cfg=RidgeConfig(), rel_floor=1e-8):
    """Remove from ``X_full`` what a ridge on ``X_control`` predicts.

    The residualizer is fit on training rows only and applied to both splits.
    Residual columns whose training variance is below ``rel_floor`` (in
    standardized units) are zeroed. Returns (residuals, alpha, n_kept).
    """
    Xc = np.asarray(X_control, dtype=float)
    Xf = np.asarray(X_full, dtype=float)
    if Xc.shape[1] == 0:
        return Xf.copy(), 0.0, Xf.shape[1]
    alpha = _select_residualizer_alpha(Xc[train], Xf[train], cfg)
    cs = zscore_fit(Xc[train])
    fs = zscore_fit(Xf[train])
    Zc = cs.apply(Xc)
    Zf = fs.apply(Xf)
    W = ridge_fit(Zc[train], Zf[train], alpha)
    resid = Zf - Zc @ W
    keep = resid[train].var(axis=0) >= rel_floor
    resid[:, ~keep] = 0.0
    return resid, alpha, int(keep.sum())


def semipartial(
    X_control,
    X_full,
    Y,
    train,
    test,
    cfg=RidgeConfig(),
    rating_dims=None,
    control_id="control",
    ids=None,
):
    """Held-out r of ratings predicted from ``X_full`` residualized on ``X_control``.

    ``train`` and ``test`` are row index arrays into the aligned matrices.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    train = np.asarray(train)
    test = np.asarray(test)
    if ids is not None:
        check_disjoint([ids[i] for i in train], [ids[i] for i in test])
    rating_dims = tuple(rating_dims or [f"y{j}" for j in range(Y.shape[1])])
    resid, alpha_res, n_kept = residualize(X_control, X_full, train, test, cfg)
    if n_kept == 0:
        logger.warning("%s: residual features have no variance, r_semi set to 0", control_id)
        t = len(rating_dims)
        return SemiPartialResult(control_id, rating_dims, (0.0,) * t, alpha_res, (0.0,) * t, (True,) * t)
    sel = cv_select([("residual", resid[train])], Y[train], cfg)
    scores = evaluate(resid[train], Y[train], resid[test], Y[test], sel.alphas, rating_dims, control_id)
    return SemiPartialResult(
        control_id,
        rating_dims,
        tuple(s.r_test for s in scores),
        alpha_res,
        tuple(s.alpha for s in scores),
        tuple(s.degenerate for s in scores),
    )


@dataclass(frozen=True)
class ReliabilityResult:
    rating_dim: str
    r_split_half: float
    n_splits: int
    spearman_brown: bool
    n_clips: int


def split_half_reliability(ratings, n_splits=100, seed=0, rating_dim="", spearman_brown=True):
    """Mean (Spearman-Brown corrected) correlation between two rater halves.

    ``ratings`` is a clips x raters matrix with NaN for missing entries. In
    each split the raters are shuffled and cut in two; each half is averaged
    per clip over the ratings it has. Clips with fewer than two ratings are
    dropped up front; clips missing a half in a given split sit that split
    out. Corrected values are clipped to [-1, 1].
    """
    R = np.asarray(ratings, dtype=float)
    counts = np.isfinite(R).sum(axis=1)
    if np.any(counts < 2):
        logger.info("%s: %d clips with < 2 raters excluded", rating_dim, int((counts < 2).sum()))
    R = R[counts >= 2]
    if R.shape[0] < 2:
        raise DataError(f"{rating_dim}: fewer than 2 clips with >= 2 raters")
    n_raters = R.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64]))
    vals = []
    for _ in range(n_splits):
        perm = rng.permutation(n_raters)
        h1, h2 = perm[: n_raters // 2], perm[n_raters // 2:]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m1 = np.nanmean(R[:, h1], axis=1)
            m2 = np.nanmean(R[:, h2], axis=1)
        ok = np.isfinite(m1) & np.isfinite(m2)
        if ok.sum() < 2:
            continue
        r = pearson_r(m1[ok], m2[ok])
        if spearman_brown:
            r = 2 * r / (1 + r) if r > -1 else -1.0
        vals.append(float(np.clip(r, -1.0, 1.0)))
    if not vals:
        raise DataError(f"{rating_dim}: no split had two usable halves")
    return ReliabilityResult(rating_dim, float(np.mean(vals)), len(vals), spearman_brown, R.shape[0])


def delta_r(scores_a, scores_b):
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape:
        raise DataError("score vectors are not aligned")
    return a - b


def score_relationship(pairs):
    """Pearson r across (rating-encoding r, pose-encoding r) pairs."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[0] < 2 or pairs.shape[1] != 2:
        raise DataError("score_relationship needs at least 2 (x, y) pairs")
    return pearson_r(pairs[:, 0], pairs[:, 1])
