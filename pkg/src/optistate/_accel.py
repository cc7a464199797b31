"""Numba switch.

Hot kernels are written twice: a loop version compiled with ``njit`` and a
vectorized numpy version. ``OPTISTATE_NO_NUMBA=1`` (or a missing numba
install) selects the numpy path everywhere.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and os.environ.get("OPTISTATE_NO_NUMBA", "0").lower() not in ("1", "true", "yes")


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if not HAS_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=False)(func)


def pick(jit_impl, numpy_impl):
    return jit_impl if USE_NUMBA else numpy_impl
