"""Standardized ridge encoding models.

Features and targets are z-scored with training statistics only, ridge
weights are fit without an intercept, and models are scored by the Pearson
correlation between predicted and observed targets on held-out rows.
Layer and alpha selection uses repeated k-fold cross-validation with
standardization refit inside every fold.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DataError, LeakageError, NumericalError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

RATING_DIMS = (
    "spatial_expanse",
    "interagent_distance",
    "agents_facing",
    "communicative",
    "physical",
)
DEFAULT_ALPHAS = tuple(float(a) for a in np.logspace(-10, 10, 21))

_STD_FLOOR = 1e-12
_VAR_FLOOR = 1e-24


@dataclass(frozen=True)
class StandardizationStats:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, X):
        return zscore_apply(X, self)


def zscore_fit(X_train):
    """Column means and population stds of the training rows.

    Columns whose std is below 1e-12 get std 1, so they standardize to 0.
    """
    X = np.asarray(X_train, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("z-scoring needs a 2-D matrix with at least 2 rows")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < _STD_FLOOR, 1.0, stds)
    return StandardizationStats(means, stds)


def zscore_apply(X, stats):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != stats.means.size:
        raise DataError(f"matrix has {X.shape[-1]} columns, statistics have {stats.means.size}")
    return (X - stats.means) / stats.stds


@dataclass(frozen=True)
class RidgeConfig:
    alpha_grid: tuple = DEFAULT_ALPHAS
    n_folds: int = 5
    n_repeats: int = 2
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", grid)
        if not grid or any(a <= 0 for a in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("alpha_grid must be positive and strictly increasing")
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")


@dataclass(frozen=True)
class FoldPlan:
    """Validation fold label of every training row, one array per repeat."""

    assignments: tuple
    n_folds: int

    def splits(self):
        for labels in self.assignments:
            for k in range(self.n_folds):
                val = np.flatnonzero(labels == k)
                train = np.flatnonzero(labels != k)
                yield train, val


def make_fold_plan(n_rows, n_folds=5, n_repeats=2, seed=0):
    """Shuffled near-equal folds; repeat ``r`` uses ``derive_seed(seed, "cv", r)``."""
    if n_rows < n_folds:
        raise DataError(f"{n_rows} training rows cannot fill {n_folds} folds")
    assignments = []
    for r in range(n_repeats):
        rng = np.random.default_rng(derive_seed(seed, "cv", r))
        labels = np.empty(n_rows, dtype=int)
        for k, idx in enumerate(np.array_split(rng.permutation(n_rows), n_folds)):
            labels[idx] = k
        assignments.append(labels)
    return FoldPlan(tuple(assignments), n_folds)


@dataclass(frozen=True)
class EncodingScore:
    feature_set_id: str
    layer_id: str
    rating_dim: str
    alpha: float
    r_test: float
    n_test: int
    degenerate: bool = False
    gamma: tuple = None


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite values in ridge inputs")


def ridge_fit(X, Y, alpha, method="auto"):
    """Ridge weights ``W`` solving ``(X'X + alpha I) W = X'Y``.

    ``method="primal"`` solves the stacked least-squares problem
    ``[X; sqrt(alpha) I] W = [Y; 0]`` by QR, ``"dual"`` computes
    ``X' (XX' + alpha I)^-1 Y``. ``"auto"`` takes the dual when there are more
    columns than rows.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DataError(f"X {X.shape} and Y {Y.shape} are not row-aligned")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    _check_finite(X, Y)
    n, d = X.shape
    if method == "auto":
        method = "dual" if d > n else "primal"
    try:
        if method == "primal":
            if alpha > 0:
                A = np.vstack([X, np.sqrt(alpha) * np.eye(d)])
                B = np.vstack([Y, np.zeros((d, Y.shape[1]))])
                Q, R = np.linalg.qr(A)
                W = la.solve_triangular(R, Q.T @ B)
            else:
                W = la.lstsq(X, Y)[0]
        elif method == "dual":
            K = X @ X.T
            K[np.diag_indices_from(K)] += alpha
            if alpha > 0:
                C = la.solve(K, Y, assume_a="pos")
            else:
                C = la.lstsq(K, Y)[0]
            W = X.T @ C
        else:
            raise ValueError(f"unknown method {method!r}")
    except (la.LinAlgError, np.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"ridge solve failed (alpha={alpha:g}, cond(X)={np.linalg.cond(X):.3g}): {exc}"
        ) from exc
    if not np.all(np.isfinite(W)):
        raise NumericalError(f"ridge solve produced non-finite weights (alpha={alpha:g})")
    return W[:, 0] if squeeze else W


def ridge_predict(X, W):
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.shape[-1] != W.shape[0]:
        raise DataError(f"X has {X.shape[-1]} columns, weights have {W.shape[0]} rows")
    return X @ W


def pearson_r(a, b, return_flag=False):
    """Pearson correlation; 0.0 (flagged degenerate) when either variance < 1e-24."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise DataError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise DataError("pearson_r needs at least 2 values")
    r, degenerate = columnwise_r(a[:, None], b[:, None])
    r, degenerate = float(r[0]), bool(degenerate[0])
    return (r, degenerate) if return_flag else r


def columnwise_r(A, B):
    """Pearson r of matching columns along axis -2; returns (r, degenerate)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    da = A - A.mean(axis=-2, keepdims=True)
    db = B - B.mean(axis=-2, keepdims=True)
    va = (da * da).mean(axis=-2)
    vb = (db * db).mean(axis=-2)
    cov = (da * db).mean(axis=-2)
    degenerate = (va < _VAR_FLOOR) | (vb < _VAR_FLOOR)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.sqrt(va * vb)
    r = np.where(degenerate, 0.0, np.clip(r, -1.0, 1.0))
    return r, np.broadcast_to(degenerate, r.shape)


def _spectral_filters(values, alphas, power):
    """``values**power / (values**2 + alpha)`` style filters, zeroing null directions."""
    alphas = np.asarray(alphas, dtype=float)[:, None]
    keep = values > 0
    denom = values**2 + alphas if power == 1 else values + alphas
    num = values if power == 1 else np.ones_like(values)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(keep, num / denom, 0.0)
    return f


def path_predictions(X_train, X_val, Y_train, alphas):
    """Validation predictions for every alpha, shape (n_alpha, n_val, t).

    Uses the SVD of the training design when it has at most as many columns
    as rows, the eigendecomposition of the linear kernel otherwise. Singular
    directions below round-off are dropped, which is their exact limit.
    """
    n, d = X_train.shape
    if d <= n:
        U, s, Vt = np.linalg.svd(X_train, full_matrices=False)
        s = np.where(s > s.max(initial=0) * max(n, d) * np.finfo(float).eps, s, 0.0)
        F = _spectral_filters(s, alphas, power=1)
        A = X_val @ Vt.T
        B = U.T @ Y_train
    else:
        return kernel_path_predictions(X_train @ X_train.T, X_val @ X_train.T, Y_train, alphas)
    return np.einsum("mk,ak,kt->amt", A, F, B)


def kernel_path_predictions(K_train, K_val, Y_train, alphas):
    """Kernel-form analogue of ``path_predictions``."""
    lam, Q = np.linalg.eigh(K_train)
    n = lam.size
    lam = np.where(lam > lam.max(initial=0) * n * np.finfo(float).eps, lam, 0.0)
    F = _spectral_filters(lam, alphas, power=0)
    A = K_val @ Q
    B = Q.T @ Y_train
    return np.einsum("mk,ak,kt->amt", A, F, B)


def cv_scores(X, Y, plan, alphas):
    """Mean validation r over all folds of ``plan``, shape (n_alpha, t)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    total = np.zeros((len(alphas), Y.shape[1]))
    n_splits = 0
    for train, val in plan.splits():
        xs = zscore_fit(X[train])
        ys = zscore_fit(Y[train])
        preds = path_predictions(xs.apply(X[train]), xs.apply(X[val]), ys.apply(Y[train]), alphas)
        r, _ = columnwise_r(preds, ys.apply(Y[val])[None])
        total += r
        n_splits += 1
    return total / n_splits


@dataclass
class Selection:
    """Winning (layer, alpha) per target column, plus the full CV table."""

    layer_ids: list
    alphas: list
    cv_r: list
    table: dict = field(repr=False, default_factory=dict)


def pick_best(table, alphas, order_keys):
    """Per target: argmax of mean r, ties to smaller alpha then ``order_keys`` order.

    ``table`` maps a key to an (n_alpha, t) score array.
    """
    keys = list(order_keys)
    t = table[keys[0]].shape[1]
    winners = []
    for j in range(t):
        best = None
        for ai, a in enumerate(alphas):
            for k in keys:
                score = table[k][ai, j]
                if best is None or score > best[2]:
                    best = (k, a, score)
        winners.append(best)
    return winners


def cv_select(layers, Y_train, cfg=RidgeConfig(), plan=None):
    """Pick the best (layer, alpha) per target column by repeated k-fold CV.

    ``layers`` is a sequence of ``(layer_id, X_train)`` pairs sharing rows
    with ``Y_train``.
    """
    layers = list(layers)
    if not layers:
        raise DataError("cv_select needs at least one layer")
    Y = np.asarray(Y_train, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if plan is None:
        plan = make_fold_plan(Y.shape[0], cfg.n_folds, cfg.n_repeats, cfg.seed)
    table = {}
    for layer_id, X in layers:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"layer {layer_id!r} has {X.shape[0]} rows, targets have {Y.shape[0]}")
        table[layer_id] = cv_scores(X, Y, plan, cfg.alpha_grid)
    winners = pick_best(table, cfg.alpha_grid, sorted(table))
    return Selection(
        layer_ids=[w[0] for w in winners],
        alphas=[w[1] for w in winners],
        cv_r=[float(w[2]) for w in winners],
        table=table,
    )


def check_disjoint(train_ids, test_ids):
    if train_ids is None or test_ids is None:
        return
    overlap = sorted(set(train_ids) & set(test_ids))
    if overlap:
        raise LeakageError(f"clip ids in both train and test: {overlap[:10]}")


def fit_predict(X_train, Y_train, X_test, alphas):
    """Standardize on training rows, fit one column per alpha, predict test rows.

    Predictions are returned in standardized target units.
    """
    xs = zscore_fit(X_train)
    ys = zscore_fit(Y_train)
    Xt, Yt, Xe = xs.apply(X_train), ys.apply(Y_train), xs.apply(X_test)
    pred = np.empty((Xe.shape[0], Yt.shape[1]))
    for a in sorted(set(alphas)):
        cols = [j for j, aj in enumerate(alphas) if aj == a]
        pred[:, cols] = ridge_predict(Xe, ridge_fit(Xt, Yt[:, cols], a))
    return pred


def evaluate(
    X_train,
    Y_train,
    X_test,
    Y_test,
    alpha,
    rating_dims=RATING_DIMS,
    feature_set_id="features",
    layer_id="",
    train_ids=None,
    test_ids=None,
):
    """Fit on the full training split and score every target on the test split.

    ``alpha`` is a scalar or one value per target column.
    """
    check_disjoint(train_ids, test_ids)
    Y_train = np.asarray(Y_train, dtype=float)
    Y_test = np.asarray(Y_test, dtype=float)
    if Y_train.ndim == 1:
        Y_train, Y_test = Y_train[:, None], Y_test[:, None]
    t = Y_train.shape[1]
    alphas = list(np.broadcast_to(np.asarray(alpha, dtype=float), (t,)))
    if len(rating_dims) != t:
        raise DataError(f"{len(rating_dims)} rating dims for {t} target columns")
    pred = fit_predict(X_train, Y_train, X_test, alphas)
    scores = []
    for j, dim in enumerate(rating_dims):
        r, degenerate = pearson_r(pred[:, j], Y_test[:, j], return_flag=True)
        if degenerate:
            logger.warning("%s/%s: degenerate prediction variance, r set to 0", feature_set_id, dim)
        scores.append(
            EncodingScore(feature_set_id, layer_id, dim, float(alphas[j]), r, len(Y_test), degenerate)
        )
    return scores
