"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of numpy and
compiled with ``njit`` when numba is importable. Setting the environment
variable ``URA_SIM_DISABLE_NUMBA=1`` (read at import time) keeps the
plain-Python versions, which is what the kernel benchmark compares
against.
"""
import os

_disabled = os.environ.get("URA_SIM_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if HAS_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend_name():
    return "numba" if HAS_NUMBA else "python"
