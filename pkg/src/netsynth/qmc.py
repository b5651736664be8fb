"""Sobol low-discrepancy points (Gray-code order) and Sobol-seeded architecture pools."""

from __future__ import annotations

import itertools
import logging
import warnings
from functools import lru_cache

import numpy as np

from netsynth._sobol_data import M_INIT, POLY

log = logging.getLogger(__name__)

BITS = 32
MAX_DIMENSION = len(POLY)


@lru_cache(maxsize=None)
def direction_numbers(dimension: int) -> np.ndarray:
    """``dimension x BITS`` table of direction integers v_k = m_k * 2**(BITS - k)."""
    if not 1 <= dimension <= MAX_DIMENSION:
        raise ValueError(f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}")
    V = np.zeros((dimension, BITS), dtype=np.uint64)
    V[0] = [1 << (BITS - 1 - k) for k in range(BITS)]
    for j in range(1, dimension):
        poly = POLY[j]
        s = poly.bit_length() - 1
        a = [(poly >> (s - i)) & 1 for i in range(1, s)]  # a_1 .. a_{s-1}
        v = [0] * BITS
        for k in range(min(s, BITS)):
            v[k] = M_INIT[j][k] << (BITS - 1 - k)
        for k in range(s, BITS):
            x = v[k - s] ^ (v[k - s] >> s)
            for i in range(1, s):
                if a[i - 1]:
                    x ^= v[k - i]
            v[k] = x
        V[j] = v
    return V


def sobol_points(dimension: int, count: int, skip: int = 1) -> np.ndarray:
    """Points ``skip .. skip+count-1`` of the unscrambled Sobol sequence in [0,1)^dimension."""
    if count < 0 or skip < 0:
        raise ValueError("count and skip must be non-negative")
    V = direction_numbers(dimension)
    if count == 0:
        return np.zeros((0, dimension))
    n = np.arange(skip, skip + count, dtype=np.uint64)
    gray = n ^ (n >> np.uint64(1))
    X = np.zeros((count, dimension), dtype=np.uint64)
    for k in range(BITS):
        on = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        X[on] ^= V[:, k]
    return X.astype(np.float64) / float(1 << BITS)


def pool_from_sobol(space, count: int, skip: int = 1) -> list:
    """``count`` distinct genes from the Sobol sequence scaled onto the grid.

    Coordinate ``u`` maps to index ``floor(u * grid_size)``. Duplicates are replaced
    by continuing the sequence, up to ``16 * count`` points in total.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    sizes = np.array(space.grid_sizes, dtype=np.int64)
    if space.total_size < count:
        warnings.warn(f"grid holds only {space.total_size} genes (< {count}); "
                      "returning the full enumeration", stacklevel=2)
        return [tuple(g) for g in itertools.product(*(range(s) for s in sizes))]
    budget = 16 * count
    seen, pool = set(), []
    drawn, pos = 0, skip
    while len(pool) < count and drawn < budget:
        chunk = min(max(count - len(pool), 64), budget - drawn)
        U = sobol_points(len(sizes), chunk, pos)
        idx = np.minimum((U * sizes).astype(np.int64), sizes - 1)
        for row in idx:
            g = tuple(int(v) for v in row)
            if g not in seen:
                seen.add(g)
                pool.append(g)
                if len(pool) == count:
                    break
        pos += chunk
        drawn += chunk
    if len(pool) < count:
        warnings.warn(f"sequence budget exhausted with {len(pool)} of {count} distinct genes",
                      stacklevel=2)
    return pool
