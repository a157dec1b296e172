"""Numba switch.

Set ``RTFUSION_DISABLE_NUMBA=1`` to run every kernel on the pure-numpy path.
Numba is also skipped silently when it cannot be imported.
"""

import os

_DISABLED = os.environ.get("RTFUSION_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by RTFUSION_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn


def set_threads(n):
    """Cap numba worker threads (no-op without numba)."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
