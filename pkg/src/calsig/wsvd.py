"""Weighted rank-1 SVD treating saturated entries as missing.

Fits ``x_ij ~ s u_i v_j`` (``u``, ``v`` unit vectors) over the observed
entries only. With variance weights each residual is scaled by the fitted
value, i.e. the objective is ``sum I_ij (x_ij / (s u_i v_j) - 1)^2``; without
them it is plain missing-data least squares ``sum I_ij (x_ij - s u_i v_j)^2``.
Saturated entries are imputed from the fit afterwards and any imputed value
that lands below the saturation ceiling is flagged, since a clipped pixel
must really have been at least that bright.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, EmptyCellError, IllConditionedError, InvalidInputError
from .kernels.wsvd import factor_update
from .linalg import as_matrix, svd
from .segmentation import PixelTimeMatrix


@dataclass
class SaturationMask:
    """``indicator`` is True where the entry was observed (below the ceiling)."""

    indicator: np.ndarray
    saturation_level: float = 255.0

    @property
    def shape(self):
        return self.indicator.shape

    @property
    def n_saturated(self):
        return int(self.indicator.size - np.count_nonzero(self.indicator))


@dataclass
class WsvdResult:
    eigenpixel: np.ndarray
    eigensignal: np.ndarray
    scale: float
    imputed: np.ndarray
    dropped_pixels: list
    kept_rows: np.ndarray
    iterations: int
    objective_trace: list
    flag_report: list
    converged: bool = True
    guarded_updates: int = 0
    use_variance_weights: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def final_objective(self):
        return self.objective_trace[-1] if self.objective_trace else float("nan")


def _values(ptm):
    if isinstance(ptm, PixelTimeMatrix):
        return ptm.values
    return as_matrix(ptm, "pixel-time matrix")


def build_mask(ptm, saturation_level=None):
    """Indicator that is False exactly where a value equals the ceiling."""
    if saturation_level is None:
        saturation_level = ptm.saturation_level if isinstance(ptm, PixelTimeMatrix) else 255.0
    x = _values(ptm)
    return SaturationMask(x != saturation_level, float(saturation_level))


def drop_saturated_pixels(ptm, mask):
    """Remove rows that are saturated in more than 7/8 of the frames.

    Row ``i`` goes iff ``p_i / m < 1/8`` with ``p_i`` its observed count;
    exactly 1/8 observed is kept. Returns ``(reduced, reduced_mask, dropped)``
    where ``reduced`` has the same type as ``ptm``.
    """
    x = _values(ptm)
    if x.shape != mask.shape:
        raise InvalidInputError(f"matrix {x.shape} and mask {mask.shape} disagree")
    m = x.shape[1]
    observed = mask.indicator.sum(axis=1)
    keep = 8 * observed >= m
    dropped = [int(i) for i in np.flatnonzero(~keep)]
    if not keep.any():
        raise EmptyCellError(f"all {x.shape[0]} pixels are saturated in more than 7/8 of frames")
    rows = np.flatnonzero(keep)
    reduced = ptm.subset(rows) if isinstance(ptm, PixelTimeMatrix) else x[rows]
    return reduced, SaturationMask(mask.indicator[rows], mask.saturation_level), dropped


WEIGHTINGS = ("variance", "indicator", "none")


def _weighting(weights, use_variance_weights):
    if weights is None:
        return "variance" if use_variance_weights else "indicator"
    if weights not in WEIGHTINGS:
        raise InvalidInputError(f"weights must be one of {WEIGHTINGS}, got {weights!r}")
    return weights


def objective(x, obs, scale, u, v, use_variance_weights=True):
    """Weighted fit objective at ``(scale, u, v)``."""
    fit = scale * np.outer(u, v)
    if use_variance_weights:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(obs, x / fit - 1.0, 0.0)
    else:
        r = np.where(obs, x - fit, 0.0)
    return float(np.sum(r * r))


def impute(x, obs, scale, u, v, saturation_level):
    """Fill unobserved entries with ``scale u_i v_j``.

    Returns ``(imputed, flags)``; ``flags`` lists ``(i, j)`` of imputed entries
    below ``saturation_level``.
    """
    fit = scale * np.outer(u, v)
    imputed = np.where(obs, x, fit)
    low = ~obs & (fit < saturation_level)
    flags = [(int(i), int(j)) for i, j in zip(*np.nonzero(low))]
    return imputed, flags


def wsvd_fit(
    ptm,
    mask=None,
    use_variance_weights=True,
    max_iters=500,
    tol=1e-8,
    *,
    weights=None,
    max_guard_fraction=0.05,
    raise_on_nonconvergence=True,
    use_numba=None,
):
    """Rank-1 weighted SVD of a pixel-time matrix with saturated entries missing.

    The fit starts from the plain rank-1 SVD of the raw matrix (saturated
    values included) and alternates closed-form updates of ``u`` then ``v``;
    each update exactly minimizes the objective in that factor. Rows that are
    more than 7/8 saturated are dropped first. Under variance weights, rows
    with no positive observed value carry no relative information and are
    dropped as well.

    ``weights`` overrides ``use_variance_weights``: ``"variance"`` and
    ``"indicator"`` are the two cases above, ``"none"`` fits every entry
    including the saturated ones with unit weight (the iteration then just
    reproduces the plain rank-1 SVD; it exists as a comparator). The mask is
    still used for imputation and flagging.

    Raises
    ------
    EmptyCellError
        nothing left to fit after dropping rows.
    InvalidInputError
        negative values, or a frame with every pixel saturated.
    IllConditionedError
        more than ``max_guard_fraction`` of the divisions needed flooring.
    ConvergenceError
        ``max_iters`` reached without the factor change dropping below ``tol``.
    """
    weights = _weighting(weights, use_variance_weights)
    weighted = weights == "variance"
    x_full = _values(ptm)
    if mask is None:
        mask = build_mask(ptm)
    if np.any(x_full < 0):
        raise InvalidInputError("wsvd_fit needs nonnegative intensities")

    reduced, rmask, dropped = drop_saturated_pixels(x_full, mask)
    kept = np.setdiff1d(np.arange(x_full.shape[0]), dropped)
    x, obs = reduced, rmask.indicator.astype(bool)
    if weighted:
        live = np.any(obs & (x > 0), axis=1)
        if not live.all():
            dropped = sorted(dropped + [int(i) for i in kept[~live]])
            kept, x, obs = kept[live], x[live], obs[live]
            if len(kept) == 0:
                raise EmptyCellError("no pixel has a positive observed value")
    fit_obs = obs if weights != "none" else np.ones_like(obs)
    empty_cols = np.flatnonzero(~fit_obs.any(axis=0))
    if len(empty_cols):
        raise InvalidInputError(
            f"{len(empty_cols)} frame(s) fully saturated after dropping, first {empty_cols[0]}"
        )

    init = svd(x, 1, use_numba=use_numba)
    u = init.left_vectors[:, 0].copy()
    v = init.right_vectors[:, 0].copy()
    scale = float(init.singular_values[0])
    xt = np.ascontiguousarray(x.T)
    obst = np.ascontiguousarray(fit_obs.T)

    trace = []
    guarded = 0
    n_updates = 0
    delta = np.inf
    it = 0
    while it < max_iters:
        it += 1
        u_new, g1 = factor_update(xt, obst, v, weighted, use_numba)
        u_new = u_new / np.linalg.norm(u_new)
        v_new, g2 = factor_update(x, fit_obs, u_new, weighted, use_numba)
        scale = float(np.linalg.norm(v_new))
        v_new = v_new / scale
        guarded += g1 + g2
        n_updates += len(u) + len(v) + len(u) + len(v)
        delta = max(np.linalg.norm(u_new - u), np.linalg.norm(v_new - v))
        u, v = u_new, v_new
        trace.append(objective(x, fit_obs, scale, u, v, weighted))
        if guarded > max_guard_fraction * n_updates:
            raise IllConditionedError(
                f"{guarded} of {n_updates} divisions hit the zero guard after {it} iterations"
            )
        if delta < tol:
            break
    converged = delta < tol
    if not converged and raise_on_nonconvergence:
        raise ConvergenceError(
            f"weighted SVD did not converge in {max_iters} iterations (step {delta:.3e})",
            residual=delta,
            trace=trace,
        )

    imputed, flags = impute(x, obs, scale, u, v, rmask.saturation_level)
    flags = [(int(kept[i]), j) for i, j in flags]
    return WsvdResult(
        eigenpixel=u,
        eigensignal=v,
        scale=scale,
        imputed=imputed,
        dropped_pixels=dropped,
        kept_rows=kept,
        iterations=it,
        objective_trace=trace,
        flag_report=flags,
        converged=converged,
        guarded_updates=guarded,
        use_variance_weights=weighted,
        meta={"weights": weights},
    )
