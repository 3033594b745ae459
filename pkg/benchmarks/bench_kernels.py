"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--large]

Each case runs once untimed (numba compile / cache load) and then reports
the best of ``--repeat`` wall-clock timings per backend, plus a check that
both backends produced the same numbers.
"""
import argparse
import time

import numpy as np

from calsig.compare import permutation_test
from calsig.linalg import svd
from calsig.simulation import SimConfig, generate
from calsig.wsvd import SaturationMask, wsvd_fit


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(large):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((131, 512))
    yield "svd 131x512", lambda nb: svd(x, use_numba=nb).singular_values
    if large:
        big = rng.standard_normal((777, 512))
        yield "svd 777x512", lambda nb: svd(big, use_numba=nb).singular_values
    ds = generate(SimConfig())
    mask = SaturationMask(ds.mask, ds.config.clip_level)
    for w in ("variance", "indicator"):
        yield f"wsvd {w} 131x512", lambda nb, w=w: wsvd_fit(ds.saturated, mask, weights=w, use_numba=nb).eigensignal
    c, t = rng.normal(1, 1, 10), rng.normal(0, 1, 10)
    yield "perm exact 10+10", lambda nb: np.array([permutation_test(c, t, mode="exact", use_numba=nb).p_value])
    yield "perm mc 1e5 10+10", lambda nb: np.array([permutation_test(c, t, 100_000, seed=1, use_numba=nb).p_value])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--large", action="store_true", help="include the 777x512 SVD (slow on numpy)")
    args = ap.parse_args(argv)
    print(f"{'case':<22}{'numba s':>10}{'numpy s':>10}{'speedup':>9}  agree")
    for name, fn in cases(args.large):
        t_nb, a = best_of(lambda: fn(True), args.repeat)
        t_np, b = best_of(lambda: fn(False), args.repeat)
        agree = np.allclose(np.abs(a), np.abs(b), rtol=1e-8, atol=1e-10)
        print(f"{name:<22}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
