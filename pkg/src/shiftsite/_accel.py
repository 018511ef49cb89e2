"""Numba switch for the hot kernels.

``SHIFTSITE_NO_NUMBA=1`` forces the pure-numpy path. The flag is read once at
import time; both variants of every kernel stay importable so they can be
benchmarked against each other in one process.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("SHIFTSITE_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED


def jit(fn):
    """Compile ``fn`` with numba (nopython, nogil, on-disk cache)."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def maybe_jit(fn):
    """Compile ``fn`` only when the numba path is enabled."""
    return jit(fn) if USE_NUMBA else fn
