import numpy as np
import pytest

from calsig.errors import InvalidInputError
from calsig.linalg import svd, variance_explained
from calsig.segmentation import RoughRoi, final_matrix, segment_roi
from calsig.simulation import (
    CohortConfig,
    DiskLayout,
    SimConfig,
    generate,
    quantize,
    raised_sine,
    recovery_error,
    recovery_study,
    render_movie,
    sine_burst,
    synthetic_cohort,
)


def test_profiles_positive():
    assert raised_sine(1).tolist() == [1.0]
    p = raised_sine(131, 0.2)
    assert p.min() == pytest.approx(0.2) and p.max() == pytest.approx(1.0, abs=1e-3)
    q = sine_burst(512)
    assert np.all(q > 0) and q[:6].tolist() == [0.2] * 6


def test_config_validation():
    for bad in [dict(n_pixels=0), dict(noise_scale=-1), dict(clip_level=0), dict(frame_interval=0)]:
        with pytest.raises(InvalidInputError):
            generate(SimConfig(**bad))
    with pytest.raises(InvalidInputError):
        generate(SimConfig(pixel_profile={"kind": "nope"}))


def test_seed_determinism():
    a, b = generate(SimConfig(seed=4)), generate(SimConfig(seed=4))
    assert np.array_equal(a.noisy, b.noisy) and np.array_equal(a.mask, b.mask)
    assert not np.array_equal(a.noisy, generate(SimConfig(seed=5)).noisy)


def test_clipping_soundness():
    ds = generate(SimConfig())
    assert np.array_equal(~ds.mask, ds.noisy > ds.config.clip_level)
    assert np.all(ds.saturated <= ds.config.clip_level)
    assert np.all(ds.noisy >= 0)
    np.testing.assert_array_equal(ds.saturated[ds.mask], ds.noisy[ds.mask])


def test_truth_is_rank_one():
    ds = generate(SimConfig(n_pixels=20, n_frames=30))
    frac = variance_explained(svd(ds.truth))
    assert frac[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.abs(frac[1:]) < 1e-12)
    np.testing.assert_allclose(ds.true_scale * np.outer(ds.true_u, ds.true_v), ds.truth, rtol=1e-12)


def test_noise_model_variance():
    sigma = 0.1
    resid = []
    for seed in range(4):
        ds = generate(SimConfig(noise_scale=sigma, clip_level=1e9, seed=seed))
        resid.append(((ds.noisy - ds.truth) / ds.truth).ravel())
    r = np.concatenate(resid)
    assert r.size >= 1e5
    assert r.var() == pytest.approx(sigma**2, rel=0.1)


def test_recovery_error_sign_alignment():
    curve, total = recovery_error([-1.0, -2.0], [1.0, 2.0])
    assert total == 0.0 and curve.tolist() == [0.0, 0.0]
    with pytest.raises(InvalidInputError):
        recovery_error([1.0], [1.0, 2.0])


def test_exact_recovery_without_noise_or_clipping():
    ds = generate(SimConfig(n_pixels=30, n_frames=60, noise_scale=0.0, clip_level=10.0))
    rep = recovery_study(ds)
    for key in ("eigenpixel", "eigensignal"):
        assert rep[key]["exact_wsvd"] and rep[key]["ratio_wsvd"] is None
        assert rep[key]["error_sum_wsvd"] < 1e-8


def test_disk_layout():
    lay = DiskLayout()
    pos = lay.positions(131)
    assert len({tuple(p) for p in pos}) == 131
    assert pos.tolist() == sorted(pos.tolist(), key=lambda p: (p[1], p[0]))
    assert lay.positions(1).tolist() == [[16, 16]]
    with pytest.raises(InvalidInputError):
        DiskLayout(8, 8, (4, 4)).positions(60)
    x0, y0, x1, y1 = lay.roi_bounds(131)
    assert RoughRoi("c", x0, y0, x1, y1).area >= 131


def test_quantize_maps_clip_to_255():
    q = quantize(np.array([0.0, 0.25, 0.5, 0.9]), 0.5)
    assert q.tolist() == [0, 128, 255, 255] and q.dtype == np.uint8


def test_single_pixel_movie():
    ds = generate(SimConfig(n_pixels=1, n_frames=20))
    stack = render_movie(ds)
    series = stack.frames[:, 16, 16]
    np.testing.assert_array_equal(series, quantize(ds.noisy[0], ds.config.clip_level))
    assert stack.frames.sum() == series.sum(dtype=np.int64)


def test_all_zero_movie():
    ds = generate(SimConfig(n_pixels=10, n_frames=5))
    ds.noisy[:] = 0.0
    assert not render_movie(ds).frames.any()


def test_render_then_extract_round_trip():
    ds = generate(SimConfig())
    stack = render_movie(ds)
    x0, y0, x1, y1 = DiskLayout().roi_bounds(131)
    ((mask, ptm),) = segment_roi(stack, RoughRoi("c", x0, y0, x1, y1))
    pos = DiskLayout().positions(131)
    rows = {tuple(p): i for i, p in enumerate(pos)}
    idx = [rows[tuple(c)] for c in ptm.coords]
    expected = np.minimum(ds.noisy[idx], ds.config.clip_level) * 255.0 / ds.config.clip_level
    assert np.abs(ptm.values - expected).max() <= 1.0
    assert len(mask) >= 100


def test_cohort_generator():
    sig, onsets = synthetic_cohort(CohortConfig(n_control=3, n_treated=4), return_onsets=True)
    assert [s.group_label for s in sig] == ["control"] * 3 + ["treated"] * 4
    assert min(onsets[3:]) >= CohortConfig().onset + CohortConfig().delay
    again = synthetic_cohort(CohortConfig(n_control=3, n_treated=4))
    assert all(np.array_equal(a.eigensignal, b.eigensignal) for a, b in zip(sig, again))
