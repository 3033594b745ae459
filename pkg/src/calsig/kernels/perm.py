"""Counting kernel for permutation tests.

Each row of ``idx`` names the members of the first group under one
relabelling; the statistic is ``mean(first) - mean(rest)``.
"""
import numpy as np

from .._accel import USE_NUMBA, njit


@njit
def _count_numba(values, idx, total, observed, tie_tol, two_sided):
    n_rows, k = idx.shape
    n_rest = values.shape[0] - k
    hits = 0
    for r in range(n_rows):
        acc = 0.0
        for c in range(k):
            acc += values[idx[r, c]]
        stat = acc / k - (total - acc) / n_rest
        if two_sided:
            if abs(stat) >= abs(observed) - tie_tol:
                hits += 1
        elif stat >= observed - tie_tol:
            hits += 1
    return hits


def _count_numpy(values, idx, total, observed, tie_tol, two_sided):
    k = idx.shape[1]
    n_rest = values.shape[0] - k
    acc = values[idx].sum(axis=1)
    stat = acc / k - (total - acc) / n_rest
    if two_sided:
        return int(np.count_nonzero(np.abs(stat) >= abs(observed) - tie_tol))
    return int(np.count_nonzero(stat >= observed - tie_tol))


def count_extreme(values, idx, observed, tie_tol, two_sided=False, use_numba=None):
    """Number of relabellings whose statistic is at least ``observed``."""
    if use_numba is None:
        use_numba = USE_NUMBA
    values = np.ascontiguousarray(values, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    total = float(values.sum())
    fn = _count_numba if use_numba else _count_numpy
    return int(fn(values, idx, total, float(observed), float(tie_tol), bool(two_sided)))
