import numpy as np
import pytest

from calsig import _accel
from calsig.kernels.jacobi import jacobi_orthogonalize, round_robin_schedule
from calsig.kernels.perm import count_extreme
from calsig.kernels.wsvd import factor_update

from conftest import random_masked


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_round_robin_covers_every_pair_once(n):
    sched = round_robin_schedule(n)
    pairs = [tuple(sorted(p)) for rnd in sched for p in rnd if min(p) >= 0]
    assert sorted(pairs) == [(i, j) for i in range(n) for j in range(i + 1, n)]
    for rnd in sched:  # columns within a round are disjoint
        used = [c for p in rnd for c in p if c >= 0]
        assert len(used) == len(set(used))


def test_jacobi_backends_agree():
    a = np.random.default_rng(0).standard_normal((20, 12))
    w1, v1, *_ = jacobi_orthogonalize(a, use_numba=True)
    w2, v2, *_ = jacobi_orthogonalize(a, use_numba=False)
    np.testing.assert_allclose(w1, w2, atol=1e-12)
    np.testing.assert_allclose(v1, v2, atol=1e-12)
    np.testing.assert_allclose(a @ v1, w1, atol=1e-12)
    g = w1.T @ w1
    assert np.abs(g - np.diag(np.diag(g))).max() < 1e-10 * np.abs(g).max()


@pytest.mark.parametrize("weighted", [True, False])
def test_factor_update_backends_agree(weighted):
    x, obs = random_masked(np.random.default_rng(1), 15, 11)
    f = np.random.default_rng(2).uniform(0.5, 1.5, 15)
    g1, n1 = factor_update(x, obs, f, weighted, use_numba=True)
    g2, n2 = factor_update(x, obs, f, weighted, use_numba=False)
    np.testing.assert_allclose(g1, g2, rtol=1e-13)
    assert n1 == n2 == 0


def test_factor_update_closed_forms():
    x = np.array([[2.0], [4.0], [9.0]])
    obs = np.array([[True], [True], [False]])
    f = np.array([1.0, 2.0, 3.0])
    g, _ = factor_update(x, obs, f, False, use_numba=False)
    assert g[0] == pytest.approx((2 * 1 + 4 * 2) / (1 + 4))
    g, _ = factor_update(x, obs, f, True, use_numba=False)
    a = (2 / 1) ** 2 + (4 / 2) ** 2
    b = 2 / 1 + 4 / 2
    assert g[0] == pytest.approx(a / b)


def test_factor_update_guard_counts_tiny_divisors(use_numba):
    x = np.ones((3, 2))
    obs = np.ones((3, 2), dtype=bool)
    f = np.array([1.0, 0.0, 1.0])
    g, guarded = factor_update(x, obs, f, True, use_numba=use_numba)
    assert guarded > 0 and np.all(np.isfinite(g))


@pytest.mark.parametrize("two_sided", [False, True])
def test_count_backends_agree(two_sided):
    rng = np.random.default_rng(4)
    values = rng.standard_normal(12)
    idx = np.array([rng.permutation(12)[:5] for _ in range(2000)])
    args = (values, idx, 0.3, 1e-12, two_sided)
    assert count_extreme(*args, use_numba=True) == count_extreme(*args, use_numba=False)


def test_env_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("CALSIG_DISABLE_NUMBA", "1")
    mod = importlib.reload(_accel)
    try:
        assert mod.USE_NUMBA is False
        assert mod.backend_name() == "numpy"
    finally:
        monkeypatch.delenv("CALSIG_DISABLE_NUMBA")
        importlib.reload(_accel)
