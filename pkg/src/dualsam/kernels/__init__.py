"""Hot loops with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from ``DUALSAM_BACKEND``
(``numba`` by default, ``numpy`` to disable JIT). If numba cannot be
imported the numpy path is used silently. Both implementations stay
importable as ``kernels.numpy_impl`` / ``kernels.numba_impl()`` so tests
and the benchmark can compare them directly.
"""
import os

from . import _numpy as numpy_impl

__all__ = ["BACKEND", "im2col", "col2im", "c3p_encode", "c3p_decode",
           "or_pool", "numpy_impl", "numba_impl"]


def numba_impl():
    """Return the numba module, or None when numba is unavailable."""
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


_requested = os.environ.get("DUALSAM_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"DUALSAM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_impl = numba_impl() if _requested == "numba" else None
if _impl is None:
    _impl = numpy_impl
BACKEND = "numba" if _impl is not numpy_impl else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
c3p_encode = _impl.c3p_encode
c3p_decode = _impl.c3p_decode
or_pool = _impl.or_pool
