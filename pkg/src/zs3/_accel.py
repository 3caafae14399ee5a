"""Backend selection for the loop kernels.

Set ``ZS3_DISABLE_NUMBA=1`` to force the pure-numpy path. Without numba
installed the numpy path is used automatically.
"""
import os

DISABLED = os.environ.get("ZS3_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, else the plain function."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)
