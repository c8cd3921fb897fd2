"""Numba acceleration toggle.

Hot kernels in :mod:`groundkit.kernels` come in two flavours: an ``@njit``
version and a pure-numpy fallback. ``GROUNDKIT_NUMBA=0`` (or ``false``/``off``)
forces the numpy path; the default is numba when it imports cleanly.
"""

import os

_FALSY = {"0", "false", "off", "no"}


def _numba_requested() -> bool:
    return os.environ.get("GROUNDKIT_NUMBA", "1").strip().lower() not in _FALSY


NUMBA_AVAILABLE = False
if _numba_requested():
    try:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:
        NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE

if not USE_NUMBA:

    def njit(*args, **kwargs):  # type: ignore[misc]
        """Decorator stub so kernel modules import without numba."""

        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
