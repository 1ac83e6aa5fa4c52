"""Numba switch.

Kernels are compiled with numba when it is importable, unless the
environment variable ``ROLLNET_DISABLE_NUMBA`` is set to a truthy value, in
which case the pure-numpy implementations are used everywhere.
"""

import os
import warnings

_FLAG = "ROLLNET_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() not in ("", "0", "false", "no")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()

if not NUMBA_AVAILABLE and not _env_disabled():  # pragma: no cover
    warnings.warn("numba not installed; falling back to numpy kernels", RuntimeWarning)


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"
