"""Optional numba acceleration.

Set ``ENTQKD_DISABLE_NUMBA=1`` to force the pure-numpy kernels, which is
useful on platforms without numba and for checking that both paths agree.
"""

import os

_FLAG = os.environ.get("ENTQKD_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    The decorated function stays callable either way; whether it is used by
    the public dispatchers is decided by ``USE_NUMBA``.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend():
    return "numba" if USE_NUMBA else "numpy"
