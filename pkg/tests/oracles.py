"""Independent reference computations used by the tests."""
import itertools

import flint
import numpy as np


def normal_equation_solve(X, Y, alpha, prec=128):
    """Solve (X'X + alpha I) W = X'Y.

    Well-conditioned systems are solved directly in float64. Otherwise the
    Gram matrix is formed and solved in ball arithmetic so the reference
    itself does not lose digits.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d = X.shape[1]
    G = X.T @ X + alpha * np.eye(d)
    if np.linalg.cond(G) * np.finfo(float).eps < 1e-10:
        return np.linalg.solve(G, X.T @ Y)
    old = flint.ctx.prec
    flint.ctx.prec = prec
    try:
        Xm = flint.arb_mat(X.tolist())
        Ym = flint.arb_mat(Y.tolist())
        Gm = Xm.transpose() * Xm
        for i in range(d):
            Gm[i, i] += flint.arb(alpha)
        W = Gm.solve(Xm.transpose() * Ym)
        return np.array([[float(W[i, j].mid()) for j in range(W.ncols())] for i in range(W.nrows())])
    finally:
        flint.ctx.prec = old


def pearson(a, b):
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    return sab / (saa * sbb) ** 0.5


def unpaired_exact_p(a, b):
    """Two-tailed p over every relabeling of the pooled values."""
    pooled = list(a) + list(b)
    na, n = len(a), len(a) + len(b)
    obs = sum(a) / na - sum(b) / len(b)
    hits = total = 0
    for idx in itertools.combinations(range(n), na):
        s = set(idx)
        ga = [pooled[i] for i in idx]
        gb = [pooled[i] for i in range(n) if i not in s]
        stat = sum(ga) / na - sum(gb) / len(gb)
        hits += abs(stat) >= abs(obs) - 1e-12 * max(1.0, abs(obs))
        total += 1
    return hits / total


def paired_exact_p(diffs):
    """One-tailed (<=) p over every sign pattern."""
    obs = sum(diffs) / len(diffs)
    hits = total = 0
    for signs in itertools.product((1, -1), repeat=len(diffs)):
        stat = sum(s * d for s, d in zip(signs, diffs)) / len(diffs)
        hits += stat <= obs + 1e-12 * max(1.0, abs(obs))
        total += 1
    return hits / total
