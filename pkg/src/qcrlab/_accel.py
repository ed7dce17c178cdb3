"""Switch between numba-compiled kernels and the plain numpy path.

Set ``QCRLAB_NUMBA=0`` before import to run every kernel as ordinary Python.
Both paths execute the same source, so results agree to rounding.
"""

import os

_FLAG = os.environ.get("QCRLAB_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _FLAG not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False


def kernel(func):
    """Compile ``func`` with numba when enabled; keep the Python original on ``.py_func``."""
    if NUMBA_ENABLED:
        compiled = _njit(cache=True)(func)
        return compiled
    func.py_func = func
    return func
