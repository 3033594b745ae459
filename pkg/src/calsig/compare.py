"""Group comparison of clarified EigenSignals.

Windows in time, an SVD across cells (EigenCells), repeated k-NN
cross-validation on the EigenCell coordinates, fold-change normalization with
landmark registration, peak height / area, and permutation tests on the
difference of group means.
"""
from dataclasses import dataclass, field, replace
from itertools import combinations
from math import comb
import logging

import numpy as np

from .errors import InvalidInputError, NoRiseError
from .kernels.perm import count_extreme
from .linalg import svd, variance_explained

log = logging.getLogger(__name__)

REGIONS = {"peak": (0.0, 4.0), "post_peak": (40.0, 80.0)}  # minutes
CONTROL, TREATED = "control", "treated"
MAX_EXACT = 10**6
_CHUNK = 65536


@dataclass
class CellSignal:
    cell_id: str
    group_label: str
    eigensignal: np.ndarray
    frame_interval: float = 10.0
    hormone_level: str = "all"
    scale: float = 1.0
    start_frame: int = 0
    landmark: int = None  # set once registered; index into the unregistered series

    def __post_init__(self):
        self.eigensignal = np.asarray(self.eigensignal, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.eigensignal)):
            raise InvalidInputError(f"{self.cell_id}: non-finite signal")

    @property
    def registered(self):
        return self.landmark is not None

    def __len__(self):
        return len(self.eigensignal)


def window_bounds(n_frames, frame_interval, region, regions=None):
    """``[start, stop)`` frame indices whose time ``j * dt`` lies in the region."""
    lo, hi = (regions or REGIONS)[region] if isinstance(region, str) else region
    dt = frame_interval / 60.0
    eps = 1e-9
    start = int(np.ceil(lo / dt - eps))
    stop = int(np.ceil(hi / dt - eps))
    if start < 0 or stop <= start or stop > n_frames:
        raise InvalidInputError(
            f"window {lo}-{hi} min needs frames {start}..{stop - 1}, signal has {n_frames}"
        )
    return start, stop


def window(signal, region, regions=None):
    """Restrict a signal to a named region (``"peak"``/``"post_peak"``) or a
    ``(start_min, stop_min)`` pair."""
    start, stop = window_bounds(len(signal), signal.frame_interval, region, regions)
    return replace(
        signal,
        eigensignal=signal.eigensignal[start:stop].copy(),
        start_frame=signal.start_frame + start,
    )


def _stack(signals):
    if len(signals) < 2:
        raise InvalidInputError("need at least two cells")
    lengths = {len(s) for s in signals}
    if len(lengths) != 1:
        raise InvalidInputError(f"signal lengths differ: {sorted(lengths)}")
    return np.vstack([s.eigensignal for s in signals])


@dataclass
class EigenCellEmbedding:
    cell_ids: list
    coords: np.ndarray  # (cells, 2)
    variance_fractions: np.ndarray  # first two components
    labels: list
    hormone_levels: list = field(default_factory=list)


def eigencell_embed(signals):
    """Cells x frames SVD; cell ``c`` maps to ``(s1 U[c,0], s2 U[c,1])``."""
    x = _stack(signals)
    t = svd(x)
    coords = t.left_vectors[:, :2] * t.singular_values[:2]
    if coords.shape[1] < 2:  # a single frame gives one component
        coords = np.column_stack([coords, np.zeros(len(signals))])
    try:
        frac = variance_explained(t)[:2]
    except InvalidInputError:
        frac = np.zeros(2)
    frac = np.pad(frac, (0, 2 - len(frac)))
    return EigenCellEmbedding(
        [s.cell_id for s in signals],
        coords,
        frac,
        [s.group_label for s in signals],
        [s.hormone_level for s in signals],
    )


@dataclass
class KnnCvResult:
    mean_error: float
    per_k: dict
    runs: int
    train_fraction: float


def _knn_predict(train_x, train_y, train_idx, test_x, k):
    d = np.sqrt(((test_x[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=2))
    preds = []
    for row in d:
        order = np.lexsort((train_idx, row))[:k]
        labels = [train_y[o] for o in order]
        counts = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        best = max(counts.values())
        tied = [lab for lab, n in counts.items() if n == best]
        # a split vote goes to the single nearest neighbour
        preds.append(tied[0] if len(tied) == 1 else labels[0])
    return preds


def knn_cv(embedding, k_values=(1, 2, 3, 4, 5), runs=1000, train_fraction=0.8, seed=0):
    """Mean test error of k-NN over repeated stratified random splits.

    Each run takes ``floor(train_fraction * n_c)`` training cells per class
    (capped so at least one test cell remains) and scores every ``k``; the
    returned mean is over runs and ``k`` values.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError("train_fraction must lie in (0, 1)")
    k_values = tuple(int(k) for k in k_values)
    x = np.asarray(embedding.coords, dtype=np.float64)
    y = list(embedding.labels)
    classes = sorted(set(y))
    members = {c: np.array([i for i, lab in enumerate(y) if lab == c]) for c in classes}
    for c, idx in members.items():
        if len(idx) < max(k_values) or len(idx) < 2:
            raise InvalidInputError(
                f"class {c!r} has {len(idx)} cells, needs at least {max(max(k_values), 2)}"
            )
    streams = np.random.SeedSequence(seed).spawn(runs)
    errors = np.zeros((runs, len(k_values)))
    for r, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        train, test = [], []
        for c in classes:
            perm = rng.permutation(members[c])
            n_train = min(int(np.floor(train_fraction * len(perm))), len(perm) - 1)
            train.extend(perm[:n_train])
            test.extend(perm[n_train:])
        train = np.sort(np.array(train))
        test = np.sort(np.array(test))
        ty = [y[i] for i in train]
        truth = [y[i] for i in test]
        for kk, k in enumerate(k_values):
            pred = _knn_predict(x[train], ty, train, x[test], k)
            errors[r, kk] = np.mean([p != t for p, t in zip(pred, truth)])
    per_k = {int(k): float(errors[:, i].mean()) for i, k in enumerate(k_values)}
    return KnnCvResult(float(errors.mean()), per_k, runs, train_fraction)


def normalize_and_register(signal, n_baseline=3, n_prestim=5, n_sd=3.0):
    """Fold-change normalize, then shift so the rise onset is frame 0.

    The signal is divided by the mean of its first ``n_baseline`` values. The
    onset is the first frame above ``mean + n_sd * sd`` of the first
    ``n_prestim`` normalized frames (sample sd); frames before it are cut.
    Already-registered signals come back unchanged.
    """
    if signal.registered:
        return signal
    x = signal.eigensignal
    if len(x) < 10:
        raise InvalidInputError(f"{signal.cell_id}: need at least 10 frames, got {len(x)}")
    base = float(np.mean(x[:n_baseline]))
    if not base > 0:
        raise InvalidInputError(f"{signal.cell_id}: baseline mean {base} is not positive")
    fold = x / base
    pre = fold[:n_prestim]
    threshold = pre.mean() + n_sd * pre.std(ddof=1)
    above = np.flatnonzero(fold > threshold)
    if len(above) == 0:
        raise NoRiseError(f"{signal.cell_id}: signal never rises above {threshold:.4g}")
    onset = int(above[0])
    return replace(signal, eigensignal=fold[onset:].copy(), landmark=onset)


def register_cohort(signals, **kwargs):
    """Register every signal, skip the ones that never rise, and truncate the
    rest to the shortest registered length. Returns ``(registered, excluded)``."""
    out, excluded = [], []
    for s in signals:
        try:
            out.append(normalize_and_register(s, **kwargs))
        except NoRiseError as exc:
            log.warning("excluding %s from peak statistics: %s", s.cell_id, exc)
            excluded.append(s.cell_id)
    if out:
        n = min(len(s) for s in out)
        out = [replace(s, eigensignal=s.eigensignal[:n].copy()) for s in out]
    return out, excluded


def peak_stats(registered, region="peak", regions=None):
    """``(height, area)`` of a registered fold-change signal inside a window.

    Height is the window maximum minus 1; area integrates ``max(x - 1, 0)``
    with the trapezoid rule in fold-change x minutes.
    """
    w = window(registered, region, regions).eigensignal
    excess = np.maximum(w - 1.0, 0.0)
    height = float(w.max() - 1.0)
    area = float(np.trapezoid(excess, dx=registered.frame_interval / 60.0))
    return height, area


@dataclass
class PermTestResult:
    statistic: float
    p_value: float
    n_permutations: int
    exact: bool
    alternative: str = "greater"

    @property
    def mode(self):
        return "exact" if self.exact else "monte_carlo"


def permutation_test(
    values_c,
    values_t,
    n_perm=10000,
    seed=0,
    mode="monte_carlo",
    alternative="greater",
    use_numba=None,
):
    """Permutation test of ``mean(C) - mean(T)``.

    ``alternative="greater"`` counts relabellings with a statistic at least
    the observed one; ``"two-sided"`` compares absolute values. Exact mode
    enumerates every split (at most 10**6) and reports the plain proportion;
    Monte Carlo mode reports ``(b + 1) / (n_perm + 1)``. ``mode="auto"``
    picks exact when it is affordable.
    """
    c = np.asarray(values_c, dtype=np.float64).ravel()
    t = np.asarray(values_t, dtype=np.float64).ravel()
    if c.size == 0 or t.size == 0:
        raise InvalidInputError("both groups need at least one value")
    if alternative not in ("greater", "two-sided"):
        raise InvalidInputError(f"unknown alternative {alternative!r}")
    values = np.concatenate([c, t])
    k, n = c.size, values.size
    total = float(values.sum())
    acc = float(c.sum())
    observed = acc / k - (total - acc) / (n - k)
    tie_tol = 1e-12 * max(1.0, float(np.abs(values).max()))
    two_sided = alternative == "two-sided"
    n_splits = comb(n, k)
    if mode == "auto":
        mode = "exact" if n_splits <= MAX_EXACT else "monte_carlo"

    if mode == "exact":
        if n_splits > MAX_EXACT:
            raise InvalidInputError(f"{n_splits} splits exceed the exact-mode limit {MAX_EXACT}")
        hits = 0
        it = combinations(range(n), k)
        while True:
            chunk = np.fromiter(
                (i for combo in _take(it, _CHUNK) for i in combo), dtype=np.int64
            ).reshape(-1, k)
            if chunk.size == 0:
                break
            hits += count_extreme(values, chunk, observed, tie_tol, two_sided, use_numba)
        return PermTestResult(observed, hits / n_splits, n_splits, True, alternative)

    if mode != "monte_carlo":
        raise InvalidInputError(f"unknown mode {mode!r}")
    if n_perm < 1:
        raise InvalidInputError("n_perm must be positive")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    base = np.arange(n)
    while done < n_perm:
        size = min(_CHUNK, n_perm - done)
        perms = rng.permuted(np.broadcast_to(base, (size, n)), axis=1)
        hits += count_extreme(values, perms[:, :k], observed, tie_tol, two_sided, use_numba)
        done += size
    return PermTestResult(observed, (hits + 1) / (n_perm + 1), n_perm, False, alternative)


def _take(it, n):
    for _ in range(n):
        try:
            yield next(it)
        except StopIteration:
            return
