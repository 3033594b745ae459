"""Synthetic pixel-time data with known rank-1 truth, clipping and noise.

The truth is ``outer(pixel_profile, signal_profile)``. Noise is Gaussian with
standard deviation ``noise_scale * truth_ij``, so its variance follows the
signal. Values above ``clip_level`` are replaced by ``clip_level``, which is
what an 8-bit detector does at grey level 255.

Random numbers come from numpy's PCG64 ``default_rng(seed)``; one call to
``standard_normal((n_pixels, n_frames))`` draws all noise in row-major
order, so a seed fixes the dataset bit for bit.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError
from .linalg import svd
from .segmentation import ImageStack
from .wsvd import SaturationMask, wsvd_fit

EXACT_TOL = 1e-8


def raised_sine(n, floor=0.2):
    """``floor + (1 - floor) sin(pi i / (n - 1))``: an arch from ``floor`` to 1."""
    if n == 1:
        return np.ones(1)
    i = np.arange(n)
    return floor + (1.0 - floor) * np.sin(np.pi * i / (n - 1))


def sine_burst(
    n,
    baseline=0.2,
    amplitude=1.0,
    onset=6,
    decay=100.0,
    period=24.0,
    rise=3.0,
):
    """Baseline plus a decaying oscillatory burst starting at frame ``onset``.

    After onset the burst is ``amplitude * (1 - exp(-t/rise)) * exp(-t/decay)
    * (0.7 + 0.3 cos(2 pi t / period))`` with ``t`` frames since onset. The
    oscillation factor never drops below 0.4, so the profile stays positive.
    """
    t = np.arange(n, dtype=np.float64) - onset
    burst = np.zeros(n)
    on = t >= 0
    tt = t[on]
    burst[on] = (
        amplitude
        * (1.0 - np.exp(-tt / rise))
        * np.exp(-tt / decay)
        * (0.7 + 0.3 * np.cos(2.0 * np.pi * tt / period))
    )
    return baseline + burst


@dataclass
class SimConfig:
    n_pixels: int = 131
    n_frames: int = 512
    clip_level: float = 0.5
    noise_scale: float = 0.1
    seed: int = 1
    frame_interval: float = 10.0
    pixel_profile: dict = field(default_factory=dict)
    signal_profile: dict = field(default_factory=dict)

    def validate(self):
        if self.n_pixels < 1 or self.n_frames < 1:
            raise InvalidInputError("n_pixels and n_frames must be positive")
        if self.noise_scale < 0:
            raise InvalidInputError("noise_scale must be nonnegative")
        if not self.clip_level > 0:
            raise InvalidInputError("clip_level must be positive")
        if not self.frame_interval > 0:
            raise InvalidInputError("frame_interval must be positive")
        return self

    def pixels(self):
        return _custom(self.pixel_profile, self.n_pixels)

    def signal(self):
        return sine_burst(self.n_frames, **self.signal_profile)

    def to_dict(self):
        return asdict(self)


def _custom(profile, n):
    kind = profile.get("kind", "raised_sine")
    if kind == "raised_sine":
        return raised_sine(n, float(profile.get("floor", 0.2)))
    if kind == "constant":
        return np.full(n, float(profile.get("value", 1.0)))
    raise InvalidInputError(f"unknown pixel profile {kind!r}")


@dataclass
class SimDataset:
    config: SimConfig
    truth: np.ndarray
    noisy: np.ndarray
    saturated: np.ndarray
    mask: np.ndarray  # True where observed (not clipped)
    true_u: np.ndarray
    true_v: np.ndarray
    true_scale: float

    @property
    def clip_fraction(self):
        return 1.0 - float(np.count_nonzero(self.mask)) / self.mask.size


def generate(config=None):
    """Draw a dataset; deterministic in ``config.seed``."""
    config = (config or SimConfig()).validate()
    p = config.pixels()
    q = config.signal()
    if np.any(p <= 0) or np.any(q <= 0):
        raise InvalidInputError("profiles must be strictly positive")
    truth = np.outer(p, q)
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(truth.shape)
    noisy = np.maximum(truth + config.noise_scale * truth * z, 0.0)
    mask = ~(noisy > config.clip_level)
    saturated = np.where(mask, noisy, config.clip_level)
    pn, qn = np.linalg.norm(p), np.linalg.norm(q)
    return SimDataset(config, truth, noisy, saturated, mask, p / pn, q / qn, float(pn * qn))


def recovery_error(estimate, truth):
    """Per-entry ``|estimate - truth|`` after flipping ``estimate`` to agree
    in sign with ``truth``; returns ``(curve, total)``."""
    est = np.asarray(estimate, dtype=np.float64).ravel()
    tru = np.asarray(truth, dtype=np.float64).ravel()
    if est.shape != tru.shape:
        raise InvalidInputError(f"length mismatch: {est.size} vs {tru.size}")
    if est @ tru < 0:
        est = -est
    curve = np.abs(est - tru)
    return curve, float(curve.sum())


@dataclass(frozen=True)
class DiskLayout:
    """Where ``render_movie`` puts the dataset's pixels.

    The ``n_pixels`` frame positions nearest ``center`` (ties in raster
    order) form a disk-like blob; dataset rows fill it in raster order.
    """

    width: int = 32
    height: int = 32
    center: tuple = (16, 16)

    def positions(self, n):
        cx, cy = self.center
        yy, xx = np.mgrid[: self.height, : self.width]
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        order = np.lexsort((xx.ravel(), yy.ravel(), d2.ravel()))
        if n > order.size:
            raise InvalidInputError(f"{n} pixels do not fit a {self.width}x{self.height} frame")
        chosen = order[:n]
        radius2 = d2.ravel()[chosen].max()
        margin = min(cx, cy, self.width - 1 - cx, self.height - 1 - cy)
        if margin < 0 or radius2 > margin**2:
            raise InvalidInputError(
                f"disk of {n} pixels (radius {np.sqrt(radius2):.1f}) overflows the frame"
            )
        xs, ys = xx.ravel()[chosen], yy.ravel()[chosen]
        raster = np.lexsort((xs, ys))
        return np.column_stack([xs[raster], ys[raster]])

    def roi_bounds(self, n, margin=4):
        pos = self.positions(n)
        x0, y0 = np.maximum(pos.min(axis=0) - margin, 0)
        x1 = min(pos[:, 0].max() + margin, self.width - 1)
        y1 = min(pos[:, 1].max() + margin, self.height - 1)
        return int(x0), int(y0), int(x1), int(y1)


def quantize(values, clip_level):
    """Map intensities to grey levels with ``clip_level -> 255``."""
    grey = np.rint(np.asarray(values) * (255.0 / clip_level))
    return np.clip(grey, 0, 255).astype(np.uint8)


def render_movie(dataset, layout=None):
    """Paint the noisy (unclipped) data into dark frames as an 8-bit movie.

    Quantization sends ``clip_level`` to 255 and saturates above it, so the
    detector clipping is reproduced by the 8-bit range itself.
    """
    layout = layout or DiskLayout()
    n, m = dataset.noisy.shape
    pos = layout.positions(n)
    frames = np.zeros((m, layout.height, layout.width), dtype=np.uint8)
    frames[:, pos[:, 1], pos[:, 0]] = quantize(dataset.noisy, dataset.config.clip_level).T
    return ImageStack(frames, dataset.config.frame_interval)


def _full_length(result, n):
    u = np.zeros(n)
    u[result.kept_rows] = result.eigenpixel
    return u


def recovery_study(dataset, tol=1e-8, max_iters=500):
    """Compare plain SVD of the clipped data against the weighted fits.

    Error sums are taken against the known unit truth vectors. Ratios are
    ``error(saturated SVD) / error(fit)``; a fit whose error sum is below
    ``1e-8`` counts as exact recovery and gets ratio ``None``. The
    ``no_weight`` comparator drops every weight (saturated entries included
    as data); ``indicator`` keeps only the missing-data indicator.
    """
    n = dataset.truth.shape[0]
    mask = SaturationMask(dataset.mask, dataset.config.clip_level)
    plain = svd(dataset.saturated, 1)
    estimates = {"saturated": (plain.left_vectors[:, 0], plain.right_vectors[:, 0])}
    fits = {}
    for name, weights in (("wsvd", "variance"), ("no_weight", "none"), ("indicator", "indicator")):
        res = wsvd_fit(dataset.saturated, mask, weights=weights, tol=tol, max_iters=max_iters)
        fits[name] = res
        estimates[name] = (_full_length(res, n), res.eigensignal)

    report = {
        "clip_fraction": dataset.clip_fraction,
        "noise_scale": dataset.config.noise_scale,
        "seed": dataset.config.seed,
        "wsvd": {
            "iterations": fits["wsvd"].iterations,
            "scale": fits["wsvd"].scale,
            "true_scale": dataset.true_scale,
            "n_flagged": len(fits["wsvd"].flag_report),
            "dropped_pixels": fits["wsvd"].dropped_pixels,
        },
    }
    for key, truth, pick in (("eigenpixel", dataset.true_u, 0), ("eigensignal", dataset.true_v, 1)):
        errs = {name: recovery_error(est[pick], truth)[1] for name, est in estimates.items()}
        entry = {f"error_sum_{name}": err for name, err in errs.items()}
        for name in ("wsvd", "no_weight", "indicator"):
            exact = errs[name] < EXACT_TOL
            entry[f"exact_{name}"] = bool(exact)
            entry[f"ratio_{name}"] = None if exact else errs["saturated"] / errs[name]
        report[key] = entry
    return report


@dataclass
class CohortConfig:
    """Two groups of EigenSignal-like traces with a transient and a plateau.

    Each trace is ``1 + height * transient + plateau * slow + noise`` with
    the transient starting at ``onset`` (plus uniform jitter in frames).
    Treated cells start ``delay`` frames later and get ``height +
    height_offset``; the plateau is shared, so late windows do not separate.
    """

    n_control: int = 10
    n_treated: int = 10
    n_frames: int = 512
    frame_interval: float = 10.0
    onset: int = 5
    jitter: int = 5
    delay: int = 12
    height: float = 2.0
    height_offset: float = 0.0
    height_sd: float = 0.1
    rise: float = 2.0
    decay: float = 15.0
    plateau: float = 0.5
    slow: float = 20.0
    noise: float = 0.01
    seed: int = 0
    hormone_level: str = "low"


def _transient(t, rise, decay):
    """Rise-decay pulse scaled so its maximum over continuous time is 1."""
    t_max = rise * np.log1p(decay / rise)
    peak = (1.0 - np.exp(-t_max / rise)) * np.exp(-t_max / decay)
    return (1.0 - np.exp(-t / rise)) * np.exp(-t / decay) / peak


def _trace(n, onset, height, cfg, rng):
    t = np.arange(n, dtype=np.float64) - onset
    on = t >= 0
    tt = t[on]
    x = np.ones(n)
    x[on] += height * _transient(tt, cfg.rise, cfg.decay)
    x[on] += cfg.plateau * (1.0 - np.exp(-tt / cfg.slow))
    return x + cfg.noise * rng.standard_normal(n)


def synthetic_cohort(cfg=None, return_onsets=False):
    """List of ``CellSignal`` (controls first); one child stream per cell.

    With ``return_onsets`` also returns the true transient onset frames.
    """
    from .compare import CONTROL, TREATED, CellSignal

    cfg = cfg or CohortConfig()
    n_cells = cfg.n_control + cfg.n_treated
    streams = np.random.SeedSequence(cfg.seed).spawn(n_cells)
    out, onsets = [], []
    for c, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        treated = c >= cfg.n_control
        onset = cfg.onset + int(rng.integers(0, cfg.jitter + 1)) + (cfg.delay if treated else 0)
        height = cfg.height + (cfg.height_offset if treated else 0.0)
        height += cfg.height_sd * rng.standard_normal()
        label, k = (TREATED, c - cfg.n_control) if treated else (CONTROL, c)
        trace = _trace(cfg.n_frames, onset, height, cfg, rng)
        out.append(
            CellSignal(f"{label}_{k:03d}", label, trace, cfg.frame_interval, cfg.hormone_level)
        )
        onsets.append(onset)
    return (out, onsets) if return_onsets else out
