"""JIT switch for the numeric kernels.

Kernels in :mod:`compresskit._kernels` exist twice: a loop version compiled
with numba and a vectorized pure-numpy version. Set
``COMPRESSKIT_DISABLE_JIT=1`` before import to force the numpy path (numba
absent has the same effect).
"""
import os

_FLAG = "COMPRESSKIT_DISABLE_JIT"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
JIT_ENABLED = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in (
    "1",
    "true",
    "yes",
    "on",
)


# unsigned index cast for loop kernels; plain int when they run uncompiled
uint64 = numba.uint64 if HAVE_NUMBA else int


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator.

    The loop kernels are always decorated; whether they are *called* is
    decided by :data:`JIT_ENABLED`.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name() -> str:
    return "numba" if JIT_ENABLED else "numpy"
