"""One-sided (Hestenes) Jacobi orthogonalization of matrix columns.

Both backends visit column pairs in the same round-robin tournament order,
so each round rotates ``ncols // 2`` disjoint pairs. The numpy backend
vectorizes a whole round; the numba backend loops over it.
"""
import numpy as np

from .._accel import USE_NUMBA, njit

ROTATE_TOL = 1e-15


def round_robin_schedule(n):
    """Return an int array ``(rounds, n_pairs, 2)`` covering every pair once.

    Classic circle method; an odd ``n`` gets a dummy player ``-1`` whose pairs
    are dropped, so every round still holds disjoint pairs.
    """
    players = list(range(n))
    if n % 2:
        players.append(-1)
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = []
        for i in range(size // 2):
            p, q = players[i], players[size - 1 - i]
            if p >= 0 and q >= 0:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    n_pairs = max((len(r) for r in rounds), default=0)
    out = np.full((len(rounds), n_pairs, 2), -1, dtype=np.int64)
    for r, pairs in enumerate(rounds):
        for k, pq in enumerate(pairs):
            out[r, k] = pq
    return out


@njit
def _sweep_numba(at, vt, schedule, rotate_tol, tiny):
    rows = at.shape[1]
    vrows = vt.shape[1]
    worst = 0.0
    for r in range(schedule.shape[0]):
        for k in range(schedule.shape[1]):
            p = schedule[r, k, 0]
            q = schedule[r, k, 1]
            if p < 0:
                continue
            alpha = 0.0
            beta = 0.0
            gamma = 0.0
            for i in range(rows):
                ap = at[p, i]
                aq = at[q, i]
                alpha += ap * ap
                beta += aq * aq
                gamma += ap * aq
            if alpha <= tiny or beta <= tiny:
                continue
            coupling = abs(gamma) / np.sqrt(alpha) / np.sqrt(beta)
            if coupling > worst:
                worst = coupling
            if coupling <= rotate_tol:
                continue
            zeta = (beta - alpha) / (2.0 * gamma)
            sign = 1.0 if zeta >= 0.0 else -1.0
            t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for i in range(rows):
                ap = at[p, i]
                aq = at[q, i]
                at[p, i] = c * ap - s * aq
                at[q, i] = s * ap + c * aq
            for i in range(vrows):
                vp = vt[p, i]
                vq = vt[q, i]
                vt[p, i] = c * vp - s * vq
                vt[q, i] = s * vp + c * vq
    return worst


def _sweep_numpy(at, vt, schedule, rotate_tol, tiny):
    worst = 0.0
    for pairs in schedule:
        pairs = pairs[pairs[:, 0] >= 0]
        if len(pairs) == 0:
            continue
        p, q = pairs[:, 0], pairs[:, 1]
        ap, aq = at[p], at[q]
        alpha = np.einsum("ij,ij->i", ap, ap)
        beta = np.einsum("ij,ij->i", aq, aq)
        gamma = np.einsum("ij,ij->i", ap, aq)
        live = (alpha > tiny) & (beta > tiny)
        coupling = np.zeros_like(alpha)
        coupling[live] = np.abs(gamma[live]) / np.sqrt(alpha[live]) / np.sqrt(beta[live])
        if coupling.size:
            worst = max(worst, float(coupling.max()))
        rot = coupling > rotate_tol
        if not rot.any():
            continue
        p, q = p[rot], q[rot]
        ap, aq = ap[rot], aq[rot]
        zeta = (beta[rot] - alpha[rot]) / (2.0 * gamma[rot])
        sign = np.where(zeta >= 0.0, 1.0, -1.0)
        t = sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
        c = 1.0 / np.sqrt(1.0 + t * t)
        s = (c * t)[:, None]
        c = c[:, None]
        at[p] = c * ap - s * aq
        at[q] = s * ap + c * aq
        vp, vq = vt[p], vt[q]
        vt[p] = c * vp - s * vq
        vt[q] = s * vp + c * vq
    return worst


def jacobi_orthogonalize(a, max_sweeps=60, tol=1e-12, use_numba=None):
    """Rotate the columns of ``a`` until they are mutually orthogonal.

    Returns ``(w, v, sweeps, residual)`` with ``a @ v == w`` (``v`` orthogonal)
    and ``residual`` the largest relative column coupling seen in the final
    sweep. Columns with norm under ``ncols * eps * ||a||_F`` count as zero and
    are left alone. Stops once a sweep's worst coupling is below ``tol``; the caller
    decides what to do if ``residual >= tol`` after ``max_sweeps``.
    """
    if use_numba is None:
        use_numba = USE_NUMBA
    # columns live in rows of the transposed copies so sweeps stream memory
    wt = np.array(np.asarray(a, dtype=np.float64).T, order="C", copy=True)
    ncols = wt.shape[0]
    vt = np.eye(ncols)
    schedule = round_robin_schedule(ncols)
    sweep = _sweep_numba if use_numba else _sweep_numpy
    # columns below this squared norm are roundoff; rotating them never settles
    frob = float(np.sqrt(np.einsum("ij,ij->", wt, wt)))
    tiny = (max(ncols, 1) * np.finfo(np.float64).eps * frob) ** 2
    residual = 0.0
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        residual = sweep(wt, vt, schedule, ROTATE_TOL, tiny)
        if residual < tol:
            break
    return wt.T, vt.T, sweeps, residual
