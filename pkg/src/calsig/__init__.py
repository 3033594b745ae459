"""Calcium-signal extraction from fluorescence movies with (weighted) SVDs."""

__version__ = "0.1.0"

from .errors import (
    CalsigError,
    ConfigError,
    ConvergenceError,
    EmptyCellError,
    IllConditionedError,
    InvalidInputError,
    NoCellFoundError,
    NoRiseError,
    UndefinedRatioError,
)
from .linalg import SvdTriplet, rank_l_reconstruct, svd, variance_explained
from .wsvd import SaturationMask, WsvdResult, build_mask, drop_saturated_pixels, wsvd_fit

__all__ = [
    "CalsigError",
    "ConfigError",
    "ConvergenceError",
    "EmptyCellError",
    "IllConditionedError",
    "InvalidInputError",
    "NoCellFoundError",
    "NoRiseError",
    "UndefinedRatioError",
    "SvdTriplet",
    "svd",
    "rank_l_reconstruct",
    "variance_explained",
    "SaturationMask",
    "WsvdResult",
    "build_mask",
    "drop_saturated_pixels",
    "wsvd_fit",
]
