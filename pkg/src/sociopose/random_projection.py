"""Sparse random projection to a fixed embedding width.

Matrix entries are ``-v``, ``0`` or ``+v`` with probabilities
``(s/2, 1 - s, s/2)``, density ``s = 1/sqrt(d_in)`` and
``v = sqrt(1 / (s * d_out))``, so squared norms are preserved in
expectation. The matrix is drawn from a stream seeded by
``derive_seed(seed, "srp", d_in)``; results are reproducible within this
package but not bit-compatible with other toolkits.
"""
import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_TARGET_DIM = 4732


@dataclass(frozen=True)
class SRPConfig:
    epsilon: float = 0.1
    target_dim: int = DEFAULT_TARGET_DIM
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if int(self.target_dim) < 1:
            raise ValueError("target_dim must be >= 1")


@dataclass(frozen=True, eq=False)
class SRPMatrix:
    d_in: int
    d_out: int
    density: float
    seed: int
    matrix: sp.csr_matrix  # (d_out, d_in)

    @property
    def value(self):
        return math.sqrt(1.0 / (self.density * self.d_out))

    def toarray(self):
        return self.matrix.toarray()


def jl_min_dim(n_samples, epsilon):
    """Johnson-Lindenstrauss dimension ``floor(4 ln n / (eps^2/2 - eps^3/3))``.

    >>> jl_min_dim(250, 0.1)
    4732
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    denom = epsilon**2 / 2 - epsilon**3 / 3
    return int(math.floor(4 * math.log(n_samples) / denom))


@functools.lru_cache(maxsize=16)
def _build(d_in, d_out, seed):
    density = min(1.0, 1.0 / math.sqrt(d_in))
    v = math.sqrt(1.0 / (density * d_out))
    rng = np.random.default_rng(derive_seed(seed, "srp", d_in))
    if density == 1.0:
        data = rng.choice([-v, v], size=d_out * d_in)
        m = sp.csr_matrix(data.reshape(d_out, d_in))
    else:
        counts = rng.binomial(d_in, density, size=d_out)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        indices = np.empty(indptr[-1], dtype=np.int64)
        for row, k in enumerate(counts):
            cols = rng.choice(d_in, size=k, replace=False)
            cols.sort()
            indices[indptr[row]:indptr[row + 1]] = cols
        data = np.where(rng.random(indptr[-1]) < 0.5, -v, v)
        m = sp.csr_matrix((data, indices, indptr), shape=(d_out, d_in))
    m.data.setflags(write=False)
    return SRPMatrix(d_in, d_out, density, seed, m)


def build_srp(d_in, cfg=SRPConfig()):
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    return _build(int(d_in), int(cfg.target_dim), int(cfg.seed))


def apply_srp(X, P):
    """Project rows of ``X`` with ``P``; inputs no wider than ``d_out`` pass through."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != P.d_in:
        raise DataError(f"matrix has {X.shape[-1]} columns, projection expects {P.d_in}")
    if P.d_in <= P.d_out:
        logger.info("d_in=%d <= d_out=%d, projection skipped", P.d_in, P.d_out)
        return X
    return np.asarray(P.matrix @ X.T).T


def project(X, cfg=SRPConfig()):
    """Project ``X`` to ``cfg.target_dim`` columns when it is wider than that."""
    X = np.asarray(X)
    if X.shape[1] <= cfg.target_dim:
        logger.info("width %d <= target %d, projection skipped", X.shape[1], cfg.target_dim)
        return X
    return apply_srp(X, build_srp(X.shape[1], cfg))
