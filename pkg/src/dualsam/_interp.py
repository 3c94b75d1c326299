"""Half-pixel-center linear interpolation along one axis.

Output index ``i`` of an ``n -> m`` resample reads input coordinate
``(i + 0.5) * n / m - 0.5`` clamped to ``[0, n - 1]``. Values are formed as
``a + f * (b - a)`` so constant signals are reproduced bit-exactly.
"""
import numpy as np


def taps(n, m):
    """Return (lo, hi, frac) index/weight arrays for an n -> m resample."""
    src = (np.arange(m, dtype=np.float64) + 0.5) * (n / m) - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    return lo, hi, src - lo


def matrix(n, m):
    """Dense (m, n) interpolation matrix; the exact adjoint of :func:`resample`."""
    lo, hi, frac = taps(n, m)
    a = np.zeros((m, n))
    rows = np.arange(m)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def resample(x, m, axis):
    """Linearly resample ``x`` to length ``m`` along ``axis``."""
    n = x.shape[axis]
    if n == m:
        return x.copy()
    lo, hi, frac = taps(n, m)
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = m
    return a + frac.reshape(shape) * (b - a)
