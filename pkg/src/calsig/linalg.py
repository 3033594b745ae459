"""Dense SVD kernels: truncated SVD, rank-L reconstruction, variance fractions.

The decomposition is a QR-preconditioned one-sided Jacobi SVD. It is slower
than LAPACK's divide-and-conquer but deterministic down to the bit for a
given backend, and its sign and ordering conventions are fixed:

* the largest-magnitude entry of each left vector is nonnegative (ties go to
  the lowest index);
* equal singular values are ordered by the index of their left vector's
  largest-magnitude entry.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidInputError, UndefinedRatioError
from .kernels.jacobi import jacobi_orthogonalize

MAX_SWEEPS = 60
SWEEP_TOL = 1e-12
# singular values within this relative distance count as tied for ordering
TIE_RTOL = 1e-13


@dataclass(frozen=True)
class SvdTriplet:
    """Leading singular triplets: ``X ~ left @ diag(singular_values) @ right.T``.

    ``left`` holds the EigenPixels (n x k), ``right`` the EigenSignals (m x k).
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    @property
    def k(self):
        return len(self.singular_values)

    @property
    def shape(self):
        return self.left_vectors.shape[0], self.right_vectors.shape[0]

    @property
    def is_full(self):
        return self.k == min(self.shape)


def as_matrix(matrix, name="matrix"):
    """Validate and convert to a finite 2-D float64 array."""
    try:
        x = np.asarray(matrix, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} is not numeric: {exc}") from None
    if x.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidInputError(f"{name} must be nonempty, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def _complete_basis(basis, good):
    """Replace the columns of ``basis`` not flagged ``good`` by an orthonormal
    completion, drawn deterministically from the standard basis."""
    n, k = basis.shape
    out = basis.copy()
    filled = [j for j in range(k) if good[j]]
    candidate = 0
    for j in range(k):
        if good[j]:
            continue
        while candidate < n:
            e = np.zeros(n)
            e[candidate] = 1.0
            candidate += 1
            q = out[:, filled]
            for _ in range(2):
                e -= q @ (q.T @ e)
            norm = np.linalg.norm(e)
            if norm > 0.5:
                out[:, j] = e / norm
                filled.append(j)
                break
        else:  # pragma: no cover - n >= k guarantees a completion exists
            raise InvalidInputError("could not complete orthonormal basis")
    return out


def _order(s, left):
    """Descending order with near-ties broken by argmax |left| index."""
    peak = np.argmax(np.abs(left), axis=0)
    order = list(np.argsort(-s, kind="stable"))
    scale = s.max() if s.size else 0.0
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and s[order[i]] - s[order[j]] <= TIE_RTOL * scale:
            j += 1
        if j - i > 1:
            order[i:j] = sorted(order[i:j], key=lambda c: (peak[c], c))
        i = j
    return np.asarray(order, dtype=np.int64)


def svd(matrix, k=None, *, use_numba=None):
    """Leading ``k`` singular triplets of ``matrix`` (all of them by default).

    Raises
    ------
    InvalidInputError
        non-2-D / non-finite input or ``k`` outside ``1..min(rows, cols)``.
    ConvergenceError
        Jacobi sweeps exhausted; ``residual`` carries the final coupling.
    """
    x = as_matrix(matrix)
    n, m = x.shape
    full = min(n, m)
    if k is None:
        k = full
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= full:
        raise InvalidInputError(f"k must be an integer in [1, {full}], got {k!r}")

    wide = n < m
    a = x.T if wide else x
    # precondition: tall a = QR, then orthogonalize the small square factor
    q, r = np.linalg.qr(a)
    w, rot, sweeps, residual = jacobi_orthogonalize(
        r, max_sweeps=MAX_SWEEPS, tol=SWEEP_TOL, use_numba=use_numba
    )
    if residual >= SWEEP_TOL:
        raise ConvergenceError(
            f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps "
            f"(residual coupling {residual:.3e})",
            residual=residual,
        )
    s = np.sqrt(np.einsum("ij,ij->j", w, w))
    smax = s.max()
    good = s > smax * full * np.finfo(float).eps if smax > 0 else np.zeros(full, bool)
    scaled = np.zeros_like(w)
    scaled[:, good] = w[:, good] / s[good]
    scaled = _complete_basis(scaled, good)
    tall_left = q @ scaled  # left vectors of a
    if wide:
        left, right = rot, tall_left
    else:
        left, right = tall_left, rot

    order = _order(s, left)[:k]
    s = s[order]
    left = np.ascontiguousarray(left[:, order])
    right = np.ascontiguousarray(right[:, order])
    peak = np.argmax(np.abs(left), axis=0)
    flip = left[peak, np.arange(k)] < 0
    left[:, flip] *= -1.0
    right[:, flip] *= -1.0
    return SvdTriplet(s, left, right)


def rank_l_reconstruct(triplet, l):
    """Sum of the first ``l`` rank-1 terms ``s_j u_j v_j^T``."""
    if not isinstance(l, (int, np.integer)) or not 1 <= l <= triplet.k:
        raise InvalidInputError(f"l must be an integer in [1, {triplet.k}], got {l!r}")
    u = triplet.left_vectors[:, :l]
    v = triplet.right_vectors[:, :l]
    return (u * triplet.singular_values[:l]) @ v.T


def variance_explained(triplet):
    """Fraction ``s_j^2 / sum(s^2)`` of the squared Frobenius norm per component.

    Needs the complete decomposition; a truncated triplet would silently
    inflate every fraction.
    """
    s = np.asarray(triplet.singular_values, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("no singular values")
    if not triplet.is_full:
        raise InvalidInputError(
            f"variance_explained needs all {min(triplet.shape)} singular values, got {s.size}"
        )
    total = float(np.sum(s * s))
    if total == 0.0:
        raise UndefinedRatioError("all singular values are zero")
    return s * s / total
