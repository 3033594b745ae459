"""Backend selection for the compiled kernels.

Set ``CALSIG_DISABLE_NUMBA=1`` to force the vectorized numpy fallbacks, e.g.
for debugging or on platforms without numba.
"""
import os

_flag = os.environ.get("CALSIG_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _flag not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it as-is.

    Kernels decorated here always get compiled if numba is importable so the
    benchmark and tests can exercise both paths regardless of the env flag.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
