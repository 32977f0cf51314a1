"""Kernel backend selection.

Hot loops are compiled with numba when it is importable.  Setting
``ACTCONV_DISABLE_NUMBA=1`` in the environment forces the pure-numpy path,
which is also used automatically when numba is missing.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

DISABLED = os.environ.get("ACTCONV_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, else a no-op decorator."""
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def prange(*args):
    if numba is None:
        return range(*args)
    return numba.prange(*args)


def active_backend():
    return "numba" if USE_NUMBA else "numpy"
