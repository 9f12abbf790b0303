"""Seed derivation shared by every stochastic stage.

A stream seed is a hash of the global seed plus a stage name and an item
id, so any stage (or any item inside it) can be rerun on its own and draw
the same numbers.
"""
import hashlib

import numpy as np


def derive_seed(global_seed, *keys):
    """Return a 64-bit seed from ``global_seed`` and any number of keys.

    >>> derive_seed(0, "srp", 100) == derive_seed(0, "srp", 100)
    True
    """
    h = hashlib.sha256()
    h.update(str(int(global_seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(global_seed, *keys):
    return np.random.default_rng(derive_seed(global_seed, *keys))
