"""Numba toggle shared by the hot kernels.

Set ``KEYTRACK_NUMBA=0`` in the environment to force the pure-numpy kernel
implementations.  When numba is missing the fallback is selected silently.
"""

from __future__ import annotations

import os

ENV_FLAG = "KEYTRACK_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


NUMBA_AVAILABLE = False
if numba_requested():
    try:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - exercised via env flag tests
        NUMBA_AVAILABLE = False

if not NUMBA_AVAILABLE:

    def njit(*args, **kwargs):  # type: ignore[misc]
        """No-op decorator stand-in so kernel sources import unchanged."""

        def wrap(func):
            return func

        if args and callable(args[0]):
            return args[0]
        return wrap
