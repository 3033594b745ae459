"""Half-step updates of the rank-1 weighted fit.

Each half-step solves for one factor with the other held fixed. For a column
``j`` with fixed unit factor ``f`` over rows ``i``:

* variance weights: ``A_j / B_j`` with ``A_j = sum_i I_ij (x_ij/f_i)^2`` and
  ``B_j = sum_i I_ij (x_ij/f_i)``;
* indicator weights only: ``sum_i I_ij f_i x_ij / sum_i I_ij f_i^2``.

Near-zero denominators are floored and counted; the caller turns a high guard
count into an error.
"""
import numpy as np

from .._accel import USE_NUMBA, njit


@njit
def _update_numba(x, obs, f, weighted, floor):
    n, m = x.shape
    out = np.empty(m)
    guarded = 0
    fs = np.empty(n)
    for i in range(n):
        fi = f[i]
        if abs(fi) < floor:
            fs[i] = floor
            guarded += 1
        else:
            fs[i] = fi
    for j in range(m):
        num = 0.0
        den = 0.0
        for i in range(n):
            if obs[i, j]:
                if weighted:
                    r = x[i, j] / fs[i]
                    num += r * r
                    den += r
                else:
                    num += f[i] * x[i, j]
                    den += f[i] * f[i]
        if den <= 0.0:
            den = floor
            guarded += 1
        out[j] = num / den
    return out, guarded


def _update_numpy(x, obs, f, weighted, floor):
    small = np.abs(f) < floor
    guarded = int(small.sum())
    if weighted:
        fs = np.where(small, floor, f)
        r = np.where(obs, x / fs[:, None], 0.0)
        num = np.einsum("ij,ij->j", r, r)
        den = r.sum(axis=0)
    else:
        fo = np.where(obs, f[:, None], 0.0)
        num = np.einsum("ij,ij->j", fo, x)
        den = np.einsum("ij,ij->j", fo, fo)
    bad = den <= 0.0
    guarded += int(bad.sum())
    den = np.where(bad, floor, den)
    return num / den, guarded


def factor_update(x, obs, f, weighted, use_numba=None):
    """Solve for the column factor of ``x ~ outer(f, g)`` given row factor ``f``.

    ``x`` is (n, m), ``obs`` the boolean observed-entry indicator, ``f`` the
    current (unit) row factor. Returns ``(g, guarded)`` where ``guarded``
    counts floored divisions. Floors sit at ``1e-12 * max|f|``.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    fmax = float(np.max(np.abs(f))) if f.size else 0.0
    floor = 1e-12 * fmax if fmax > 0.0 else 1e-300
    if use_numba:
        return _update_numba(x, obs, f, bool(weighted), floor)
    return _update_numpy(x, obs, f, bool(weighted), floor)
