"""Optional numba acceleration for the hot loops.

Set ``BESSMARKET_NO_NUMBA=1`` to force the pure-numpy/Python path (useful
for debugging and for the kernel benchmark).
"""

import os

_DISABLED = os.environ.get("BESSMARKET_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by BESSMARKET_NO_NUMBA")
    import numba

    NUMBA_AVAILABLE = True
except ImportError:
    numba = None
    NUMBA_AVAILABLE = False


def maybe_njit(func):
    """Compile ``func`` with ``numba.njit(cache=True)`` when numba is enabled."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if NUMBA_AVAILABLE else "python"
