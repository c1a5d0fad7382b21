"""Numba switch.

Set ``ROOFKIT_NO_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging, profiling and platforms without an LLVM build of numba).
"""
import os

_flag = os.environ.get("ROOFKIT_NO_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None

USE_NUMBA = numba is not None and _flag not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise a no-op decorator."""
    if not USE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)
