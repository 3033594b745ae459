import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calsig.compare import (
    CellSignal,
    EigenCellEmbedding,
    _knn_predict,
    eigencell_embed,
    knn_cv,
    normalize_and_register,
    peak_stats,
    permutation_test,
    register_cohort,
    window,
)
from calsig.errors import InvalidInputError, NoRiseError
from calsig.simulation import CohortConfig, synthetic_cohort


def cs(values, label="control", dt=10.0, **kw):
    return CellSignal(kw.pop("cell_id", "c"), label, np.asarray(values, float), dt, **kw)


def separable_by_line(points, labels):
    """Exhaustive angle sweep: is there a direction whose projection splits the groups?"""
    labels = np.asarray(labels)
    for theta in np.linspace(0, np.pi, 3600, endpoint=False):
        proj = points @ np.array([np.cos(theta), np.sin(theta)])
        a, b = proj[labels == labels[0]], proj[labels != labels[0]]
        if a.max() < b.min() or b.max() < a.min():
            return True
    return False


# windows ---------------------------------------------------------------


@pytest.mark.parametrize(
    "dt,region,n", [(10.0, "peak", 24), (10.0, "post_peak", 240), (5.0, "peak", 48)]
)
def test_window_lengths(dt, region, n):
    w = window(cs(np.arange(1024.0), dt=dt), region)
    assert len(w) == n


def test_window_indices():
    w = window(cs(np.arange(512.0)), "post_peak")
    assert w.eigensignal[0] == 240 and w.eigensignal[-1] == 479 and w.start_frame == 240


def test_window_outside_recording():
    with pytest.raises(InvalidInputError):
        window(cs(np.arange(300.0)), "post_peak")


# embedding -------------------------------------------------------------


def test_identical_cells_identical_coordinates():
    e = eigencell_embed([cs([1.0, 2, 3], cell_id="a"), cs([1.0, 2, 3], cell_id="b")])
    np.testing.assert_allclose(e.coords[0], e.coords[1], atol=1e-12)


def test_two_clusters_two_points():
    a, b = np.sin(np.arange(20.0)), np.cos(np.arange(20.0))
    sig = [cs(a, "control")] * 3 + [cs(b, "treated")] * 4
    e = eigencell_embed(sig)
    pts = {tuple(np.round(p, 9)) for p in e.coords}
    assert len(pts) == 2
    assert e.variance_fractions.sum() == pytest.approx(1.0)


def test_embed_requires_matching_lengths():
    with pytest.raises(InvalidInputError):
        eigencell_embed([cs([1.0, 2]), cs([1.0, 2, 3])])
    with pytest.raises(InvalidInputError):
        eigencell_embed([cs([1.0, 2])])


def test_delayed_onset_groups_linearly_separable():
    sig = synthetic_cohort(CohortConfig(seed=3))
    e = eigencell_embed([window(s, "peak") for s in sig])
    assert separable_by_line(e.coords, e.labels)


def test_embedding_scale_invariance():
    sig = synthetic_cohort(CohortConfig(n_control=6, n_treated=6, seed=1))
    e1 = eigencell_embed([window(s, "peak") for s in sig])
    scaled = [cs(3.5 * s.eigensignal, s.group_label) for s in sig]
    e2 = eigencell_embed([window(s, "peak") for s in scaled])
    np.testing.assert_allclose(e2.coords, 3.5 * e1.coords, rtol=1e-9, atol=1e-12)
    a = knn_cv(e1, runs=50, seed=2)
    b = knn_cv(e2, runs=50, seed=2)
    assert a.per_k == b.per_k


# k-NN ------------------------------------------------------------------


def emb(coords, labels):
    return EigenCellEmbedding(list(range(len(labels))), np.asarray(coords, float), np.zeros(2), list(labels))


def test_knn_separable_clusters_zero_error():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 1, (12, 2))
    b = rng.normal(0, 1, (12, 2)) + [30.0, 0.0]
    r = knn_cv(emb(np.vstack([a, b]), ["c"] * 12 + ["t"] * 12), runs=200)
    assert r.mean_error == 0.0 and set(r.per_k) == {1, 2, 3, 4, 5}


def test_knn_random_labels_half_error():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(40, 2))
    labels = ["c"] * 20 + ["t"] * 20
    r = knn_cv(emb(pts, labels), runs=1000, seed=5)
    assert r.mean_error == pytest.approx(0.5, abs=0.05)


def test_knn_deterministic():
    rng = np.random.default_rng(2)
    e = emb(rng.normal(size=(20, 2)), ["a"] * 10 + ["b"] * 10)
    assert knn_cv(e, runs=30, seed=9).mean_error == knn_cv(e, runs=30, seed=9).mean_error


def test_knn_class_too_small():
    with pytest.raises(InvalidInputError):
        knn_cv(emb(np.zeros((7, 2)), ["a"] * 4 + ["b"] * 3), k_values=(1, 2, 3, 4))
    with pytest.raises(InvalidInputError):
        knn_cv(emb(np.zeros((6, 2)), ["a"] * 3 + ["b"] * 3), train_fraction=1.0)


def test_knn_tie_rules():
    train = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 5.0]])
    # equidistant neighbours: the lower index wins the distance tie
    assert _knn_predict(train, ["a", "b", "b"], np.array([0, 1, 2]), np.zeros((1, 2)), 1) == ["a"]
    assert _knn_predict(train, ["a", "b", "b"], np.array([4, 1, 2]), np.zeros((1, 2)), 1) == ["b"]
    # 1-1 vote: goes to the single nearest neighbour
    q = np.array([[0.9, 0.0]])
    assert _knn_predict(train, ["a", "b", "b"], np.array([0, 1, 2]), q, 2) == ["a"]


# normalization / registration -------------------------------------------


def test_constant_signal_no_rise():
    s = cs(np.full(20, 7.0))
    with pytest.raises(NoRiseError):
        normalize_and_register(s)


def test_step_signal_landmark():
    r = normalize_and_register(cs([2, 2, 2, 2, 2] + [10] * 10))
    assert r.landmark == 5
    assert r.eigensignal[0] == 5.0 and len(r) == 10


def test_register_preconditions():
    with pytest.raises(InvalidInputError):
        normalize_and_register(cs(np.ones(9)))
    with pytest.raises(InvalidInputError):
        normalize_and_register(cs([0, 0, 0] + [1] * 10))


def test_register_idempotent():
    once = normalize_and_register(cs([2, 2.1, 1.9, 2, 2] + [10] * 20))
    twice = normalize_and_register(once)
    assert np.array_equal(once.eigensignal, twice.eigensignal)
    assert twice.landmark == once.landmark


def test_jittered_onsets_align():
    sig, onsets = synthetic_cohort(CohortConfig(noise=0.0, delay=0, jitter=5), return_onsets=True)
    reg, excluded = register_cohort(sig)
    assert not excluded
    assert len(set(onsets)) > 1
    assert len({r.landmark - o for r, o in zip(reg, onsets)}) == 1
    assert len({len(r) for r in reg}) == 1


def test_register_cohort_excludes_flat_cells():
    sig = synthetic_cohort(CohortConfig(n_control=3, n_treated=3, noise=0.0))
    sig.append(cs(np.ones(512), cell_id="flat"))
    reg, excluded = register_cohort(sig)
    assert excluded == ["flat"] and len(reg) == 6


# peak statistics --------------------------------------------------------


def test_flat_peak():
    assert peak_stats(cs(np.ones(40), landmark=0)) == (0.0, 0.0)


def test_triangle_peak():
    tri = np.r_[1 + np.linspace(0, 2, 7), 1 + np.linspace(2, 0, 7)[1:], np.ones(20)]
    h, a = peak_stats(cs(tri, landmark=0))
    assert h == pytest.approx(2.0) and a == pytest.approx(2.0)


def test_injected_height_offset_recovered():
    delta = 0.5
    cfg = CohortConfig(n_control=30, n_treated=30, height_offset=-delta, delay=0, seed=4)
    reg, _ = register_cohort(synthetic_cohort(cfg))
    h = np.array([peak_stats(r)[0] for r in reg])
    c, t = h[:30], h[30:]
    diff = c.mean() - t.mean()
    se = np.sqrt(c.var(ddof=1) / 30 + t.var(ddof=1) / 30)
    assert abs(diff - delta) < 3 * se + 0.05


# permutation test ---------------------------------------------------------


def enumerate_p(c, t):
    vals = np.r_[c, t]
    obs = np.mean(c) - np.mean(t)
    stats = []
    for idx in itertools.combinations(range(len(vals)), len(c)):
        mask = np.zeros(len(vals), bool)
        mask[list(idx)] = True
        stats.append(vals[mask].mean() - vals[~mask].mean())
    return np.mean(np.array(stats) >= obs - 1e-12)


def test_exact_example(use_numba):
    r = permutation_test([4, 5, 6], [1, 2, 3], mode="exact", use_numba=use_numba)
    assert r.statistic == 3.0 and r.p_value == pytest.approx(0.05) and r.n_permutations == 20
    assert r.p_value == pytest.approx(enumerate_p([4, 5, 6], [1, 2, 3]))


def test_all_tied_example():
    r = permutation_test([5, 5, 5], [5, 5, 5], mode="exact")
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_exact_against_enumeration_oracle():
    rng = np.random.default_rng(3)
    c, t = rng.normal(size=5), rng.normal(size=6)
    assert permutation_test(c, t, mode="exact").p_value == pytest.approx(enumerate_p(c, t))


def test_monte_carlo_close_to_exact(use_numba):
    r = permutation_test([4, 5, 6], [1, 2, 3], n_perm=100_000, seed=1, use_numba=use_numba)
    assert abs(r.p_value - 0.05) < 0.01 and not r.exact


def test_monte_carlo_seeded():
    a = permutation_test([1, 3, 2, 5], [2, 2, 1], n_perm=500, seed=7)
    b = permutation_test([1, 3, 2, 5], [2, 2, 1], n_perm=500, seed=7)
    assert a == b


def test_two_sided():
    r = permutation_test([1, 2, 3], [4, 5, 6], mode="exact", alternative="two-sided")
    assert r.statistic == -3.0 and r.p_value == pytest.approx(0.1)
    greater = permutation_test([1, 2, 3], [4, 5, 6], mode="exact")
    assert greater.p_value == 1.0


def test_permutation_errors():
    with pytest.raises(InvalidInputError):
        permutation_test([], [1.0])
    with pytest.raises(InvalidInputError):
        permutation_test(np.arange(20.0), np.arange(20.0), mode="exact")
    with pytest.raises(InvalidInputError):
        permutation_test([1.0], [2.0], mode="bogus")


def test_auto_mode():
    assert permutation_test([1.0, 2.0], [3.0, 4.0], mode="auto").exact
    assert not permutation_test(np.arange(20.0), np.arange(20.0), n_perm=99, mode="auto").exact


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=6),
    st.lists(st.floats(-100, 100), min_size=1, max_size=6),
    st.integers(1, 200),
)
def test_property_p_bounds(c, t, n_perm):
    r = permutation_test(c, t, n_perm=n_perm, seed=0)
    assert 1.0 / (n_perm + 1) <= r.p_value <= 1.0
    e = permutation_test(c, t, mode="exact")
    assert 0.0 < e.p_value <= 1.0
