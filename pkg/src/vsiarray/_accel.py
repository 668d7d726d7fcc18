"""Optional numba acceleration.

Set ``VSIARRAY_DISABLE_NUMBA=1`` to force the pure-numpy code paths (useful
for debugging and coverage, and on platforms without numba).
"""

import os

USE_NUMBA = os.environ.get("VSIARRAY_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def backend():
    return "numba" if USE_NUMBA else "numpy"
