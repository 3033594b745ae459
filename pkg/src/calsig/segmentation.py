"""Cell segmentation from a movie plus rough rectangular regions.

Flow: peak frame -> rough pixel-time matrix over a rectangle -> first
EigenPixel image -> blur / Otsu / distance watershed -> per-cell masks ->
final pixel-time matrix over each mask.

Coordinates are ``(x, y)`` with ``x`` the column; matrices list pixels in
raster order (``y`` major, then ``x``).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.segmentation import watershed

from .errors import InvalidInputError, NoCellFoundError
from .linalg import svd

FOUR_CONN = ndimage.generate_binary_structure(2, 1)
EIGHT_CONN = ndimage.generate_binary_structure(2, 2)


@dataclass
class ImageStack:
    """8-bit movie, ``frames`` shaped (T, height, width)."""

    frames: np.ndarray
    frame_interval: float = 10.0

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise InvalidInputError(f"frames must be (T, H, W) with T >= 1, got {frames.shape}")
        if frames.dtype != np.uint8:
            if np.any(frames < 0) or np.any(frames > 255):
                raise InvalidInputError("pixel values must lie in [0, 255]")
            frames = frames.astype(np.uint8)
        self.frames = frames
        if not self.frame_interval > 0:
            raise InvalidInputError("frame_interval must be positive")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


@dataclass(frozen=True)
class RoughRoi:
    """Inclusive pixel rectangle ``[x0, x1] x [y0, y1]``."""

    cell_id: str
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def shape(self):
        return self.y1 - self.y0 + 1, self.x1 - self.x0 + 1

    @property
    def area(self):
        h, w = self.shape
        return h * w

    def validate(self, stack=None):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise InvalidInputError(f"roi {self.cell_id}: empty rectangle")
        if self.area < 16:
            raise InvalidInputError(f"roi {self.cell_id}: area {self.area} < 16 pixels")
        if min(self.x0, self.y0) < 0:
            raise InvalidInputError(f"roi {self.cell_id}: negative coordinates")
        if stack is not None and (self.x1 >= stack.width or self.y1 >= stack.height):
            raise InvalidInputError(
                f"roi {self.cell_id}: ({self.x1}, {self.y1}) outside "
                f"{stack.width}x{stack.height} frame"
            )
        return self


@dataclass
class CellMask:
    cell_id: str
    pixels: np.ndarray  # (n, 2) int (x, y), raster order

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((px[:, 0], px[:, 1]))
        self.pixels = px[order]

    def __len__(self):
        return len(self.pixels)


@dataclass
class PixelTimeMatrix:
    """One cell's n pixels x m frames intensity matrix."""

    cell_id: str
    coords: np.ndarray  # (n, 2) int (x, y)
    values: np.ndarray  # (n, m) float
    saturation_level: float = 255.0
    frame_interval: float = 10.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidInputError("values must be 2-D")
        if len(self.coords) != self.values.shape[0]:
            raise InvalidInputError(
                f"{len(self.coords)} coordinates for {self.values.shape[0]} rows"
            )

    @property
    def shape(self):
        return self.values.shape

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return PixelTimeMatrix(
            self.cell_id,
            self.coords[rows],
            self.values[rows],
            self.saturation_level,
            self.frame_interval,
            dict(self.meta),
        )


def find_peak_frame(stack):
    """Index of the frame with the largest total intensity (earliest on ties)."""
    totals = stack.frames.reshape(stack.n_frames, -1).sum(axis=1, dtype=np.int64)
    return int(np.argmax(totals))


def _extract(stack, xs, ys, cell_id):
    values = stack.frames[:, ys, xs].T.astype(np.float64)
    coords = np.column_stack([xs, ys])
    return PixelTimeMatrix(cell_id, coords, values, 255.0, stack.frame_interval)


def rough_matrix(stack, roi):
    """Pixel-time matrix over every pixel of ``roi`` in raster order."""
    roi.validate(stack)
    yy, xx = np.mgrid[roi.y0 : roi.y1 + 1, roi.x0 : roi.x1 + 1]
    return _extract(stack, xx.ravel(), yy.ravel(), roi.cell_id)


def final_matrix(stack, mask):
    """Pixel-time matrix over the pixels of ``mask`` in raster order."""
    if len(mask) == 0:
        raise InvalidInputError(f"mask {mask.cell_id} is empty")
    xs, ys = mask.pixels[:, 0], mask.pixels[:, 1]
    if xs.min() < 0 or ys.min() < 0 or xs.max() >= stack.width or ys.max() >= stack.height:
        raise InvalidInputError(f"mask {mask.cell_id} extends outside the frame")
    return _extract(stack, xs, ys, mask.cell_id)


def eigenpixel_image(ptm, roi=None):
    """Scatter ``|u1|`` of the pixel-time matrix back onto the rectangle.

    Returns ``(image, origin)`` with ``origin = (x0, y0)`` the frame position
    of ``image[0, 0]``. Without ``roi`` the bounding box of the coordinates
    is used. Positions without a matrix row stay 0.
    """
    u = svd(ptm.values, 1).left_vectors[:, 0]
    if roi is None:
        x0, y0 = ptm.coords.min(axis=0)
        x1, y1 = ptm.coords.max(axis=0)
    else:
        x0, y0, x1, y1 = roi.x0, roi.y0, roi.x1, roi.y1
    image = np.zeros((y1 - y0 + 1, x1 - x0 + 1))
    image[ptm.coords[:, 1] - y0, ptm.coords[:, 0] - x0] = np.abs(u)
    return image, (int(x0), int(y0))


def otsu_threshold(image, nbins=256):
    """Otsu's threshold on the min-max scaled image, in scaled units [0, 1].

    Foreground is ``scaled > threshold``. Returns ``None`` for a constant image.
    """
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return None
    scaled = (image - lo) / (hi - lo)
    hist, edges = np.histogram(scaled, bins=nbins, range=(0.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist).astype(np.float64)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0), where=w0 > 0)
    mu1 = np.divide(m0[-1] - m0, w1, out=np.zeros_like(m0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    k = int(np.argmax(between[:-1]))
    return float(edges[k + 1])


def _seeds(distance, footprint):
    size = 2 * footprint + 1
    peaks = (distance == ndimage.maximum_filter(distance, size=size, mode="constant")) & (
        distance > 0
    )
    markers, _ = ndimage.label(peaks, structure=EIGHT_CONN)
    return markers


def segment(
    eigen_image,
    sigma=2.0,
    min_area=20,
    *,
    seed_footprint=3,
    origin=(0, 0),
    cell_id="cell",
):
    """Split an EigenPixel image into disjoint 4-connected cell masks.

    Gaussian blur -> Otsu threshold -> Euclidean distance transform ->
    watershed (8-neighbour flooding) from 8-connected local-maximum seeds ->
    4-connected components of each basin -> drop components under
    ``min_area``. ``seed_footprint`` is the half-width of the window a seed
    must dominate, which keeps ragged outlines from spawning extra basins.

    Masks come back sorted by their first raster pixel; with more than one
    mask the ids are ``f"{cell_id}_{k}"`` for ``k = 1, 2, ...``.
    """
    image = np.asarray(eigen_image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidInputError("eigen image must be 2-D")
    if np.any(image < 0) or not np.all(np.isfinite(image)):
        raise InvalidInputError("eigen image must be finite and nonnegative")
    blurred = ndimage.gaussian_filter(image, sigma) if sigma > 0 else image
    thresh = otsu_threshold(blurred)
    if thresh is None:
        raise NoCellFoundError(f"{cell_id}: flat image, no foreground")
    lo, hi = blurred.min(), blurred.max()
    foreground = (blurred - lo) / (hi - lo) > thresh
    if not foreground.any():
        raise NoCellFoundError(f"{cell_id}: empty foreground after threshold")

    distance = ndimage.distance_transform_edt(foreground)
    markers = _seeds(distance, seed_footprint)
    basins = watershed(-distance, markers, mask=foreground, connectivity=2)

    pieces = []
    for label in range(1, int(basins.max()) + 1):
        comps, n = ndimage.label(basins == label, structure=FOUR_CONN)
        for c in range(1, n + 1):
            ys, xs = np.nonzero(comps == c)
            if len(ys) >= min_area:
                pieces.append(np.column_stack([xs, ys]))
    if not pieces:
        raise NoCellFoundError(f"{cell_id}: no component reaches {min_area} pixels")

    ox, oy = origin
    masks = [CellMask(cell_id, p + (ox, oy)) for p in pieces]
    masks.sort(key=lambda mk: (mk.pixels[0, 1], mk.pixels[0, 0]))
    if len(masks) > 1:
        for k, mk in enumerate(masks, start=1):
            mk.cell_id = f"{cell_id}_{k}"
    return masks


def segment_roi(stack, roi, sigma=2.0, min_area=20, seed_footprint=3):
    """Full per-rectangle path: rough matrix -> EigenPixel -> masks -> matrices."""
    rough = rough_matrix(stack, roi)
    image, origin = eigenpixel_image(rough, roi)
    masks = segment(
        image, sigma, min_area, seed_footprint=seed_footprint, origin=origin, cell_id=roi.cell_id
    )
    return [(mk, final_matrix(stack, mk)) for mk in masks]
