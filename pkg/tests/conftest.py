import numpy as np
import pytest

from calsig._accel import HAVE_NUMBA

BACKENDS = [pytest.param(True, id="numba"), pytest.param(False, id="numpy")]
if not HAVE_NUMBA:  # pragma: no cover
    BACKENDS = [pytest.param(False, id="numpy")]


@pytest.fixture(params=BACKENDS)
def use_numba(request):
    return request.param


def jacobi_eigvalsh(a, tol=1e-14, max_sweeps=100):
    """Textbook cyclic two-sided Jacobi eigenvalues of a symmetric matrix.

    Applies each plane rotation to rows and columns ``p, q`` of the full
    symmetric matrix, so it shares nothing with the library's one-sided,
    QR-preconditioned SVD kernel.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * ap - s * aq, s * ap + c * aq
    return np.sort(np.diag(a))[::-1]


def oracle_singular_values(x):
    x = np.asarray(x, dtype=np.float64)
    g = x.T @ x if x.shape[0] >= x.shape[1] else x @ x.T
    return np.sqrt(np.maximum(jacobi_eigvalsh(g), 0.0))


def random_masked(rng, n, m, p_missing=0.2):
    """Positive rank-1-ish matrix with a mask that leaves every row/column observed."""
    u = rng.uniform(0.5, 1.5, n)
    v = rng.uniform(0.5, 1.5, m)
    x = np.outer(u, v) * (1 + 0.05 * rng.standard_normal((n, m)))
    x = np.abs(x)
    obs = rng.random((n, m)) > p_missing
    obs[np.arange(n), rng.integers(0, m, n)] = True
    obs[rng.integers(0, n, m), np.arange(m)] = True
    return x, obs


# acceptance summary: one PASS/FAIL line per criterion ------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    key = (mark.args[0], item.name)
    if rep.when == "call" or key not in _CRITERIA:
        _CRITERIA[key] = (mark.args[1], "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    def order(kv):
        n = str(kv[0][0])
        digits = "".join(ch for ch in n if ch.isdigit())
        return int(digits or 0), n, kv[0][1]

    for (n, name), (title, status) in sorted(_CRITERIA.items(), key=order):
        terminalreporter.write_line(f"criterion {n:<3} {status}  {title}  [{name}]")
