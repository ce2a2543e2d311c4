"""numba switch for the hot kernels.

The kernels run as plain numpy by default. ``SPEEDSEQ_NUMBA=1`` compiles
them with numba when it is installed. The flag is read once at import time,
so set it before importing speedseq.

numpy is the default because numba's scalar ``tanh``/``exp`` (without Intel
SVML) lose to numpy's vectorized ufuncs at the training shapes, which
outweighs the fused loops; ``benchmarks/bench_kernels.py`` measures both.
"""
import os

_FLAG = os.environ.get("SPEEDSEQ_NUMBA", "0").strip().lower()

try:
    import numba
    import numba.extending

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG in ("1", "true", "yes", "on")


def maybe_njit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged.

    The kernels are written in the numpy subset numba understands, so the
    undecorated function is the numpy path. The original is always kept on
    ``.py_func`` for side-by-side comparison.
    """
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    func.py_func = func
    return func


def jitable(func):
    """Mark a helper callable from compiled kernels while staying plain Python."""
    if HAVE_NUMBA:
        return numba.extending.register_jitable(func)
    return func
