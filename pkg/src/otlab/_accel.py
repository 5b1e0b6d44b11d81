"""Numba switch.

Hot kernels in :mod:`otlab.kernels` exist twice: a numba ``@njit`` version and
a pure-numpy version. The numba path is used when numba imports and the
environment variable ``OTLAB_DISABLE_NUMBA`` is not set to a truthy value.
"""

import os

_FLAG = os.environ.get("OTLAB_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def deco(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return deco
