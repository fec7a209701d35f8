"""Reproducible RNG substreams.

Every Monte Carlo loop in this package draws from substreams derived from
one master seed by a counter-based splitting discipline: the stream with
key (k1, k2, ...) under master seed s is ``SeedSequence(s, spawn_key=(k1,
k2, ...))``.  The mapping is a documented stable construction, independent
of thread count, scheduling and process boundaries, so any order-insensitive
aggregate is reproducible and single-threaded runs are byte-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "substreams"]


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the generator for substream `key` of `master_seed`."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def substreams(master_seed: int, n: int, *prefix: int):
    """Yield generators for keys (*prefix, 0) .. (*prefix, n-1)."""
    for i in range(n):
        yield substream(master_seed, *prefix, i)
