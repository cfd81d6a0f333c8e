"""Optional numba compilation for the hot kernels.

Set ``PURE_EXPLORE_DISABLE_JIT=1`` before import to run every kernel as plain
Python/numpy. Both paths execute the same source and consume the same random
stream, so results are bit-identical up to floating-point reassociation (none
is enabled: ``fastmath`` stays off).
"""
import os

DISABLED = os.environ.get("PURE_EXPLORE_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes"}

if not DISABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover
        DISABLED = True

if DISABLED:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap

else:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)


BACKEND = "python" if DISABLED else "numba"
