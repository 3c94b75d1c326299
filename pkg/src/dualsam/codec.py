"""Criss-cross connectivity labels.

A binary mask (H, W) becomes an (H, W, 8) label: channel ``c`` of pixel
``(w, h)`` is set when both the pixel and its neighbor at ``OFFSETS[c]`` are
foreground. Offsets are ``(du, dv)`` with ``du`` along the width axis and
``dv`` along the height axis; channel ``c`` and ``7 - c`` point in opposite
directions, so decoding accepts a link only when both endpoints assert it.

Channel indices here are 0-based; channel ``k`` is channel ``k + 1`` in the
1..8 numbering used in file headers and docs.
"""
from __future__ import annotations

import numpy as np

from . import kernels

OFFSETS = np.array(
    [(-2, 0), (-1, 0), (0, -2), (0, -1), (0, 1), (0, 2), (1, 0), (2, 0)],
    dtype=np.int64,
)
OFFSETS.setflags(write=False)
N_CHANNELS = len(OFFSETS)

LABEL_MAGIC = b"C3PL\n"
MAP_MAGIC = b"C3PF\n"


class CodecFormatError(ValueError):
    pass


def offsets():
    """The 8 criss-cross displacements, channel-ordered (copy)."""
    return OFFSETS.copy()


def reciprocal(c):
    """0-based channel pointing back along ``OFFSETS[c]``."""
    return N_CHANNELS - 1 - c


def _as_mask(mask):
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {m.shape}")
    if m.dtype != np.uint8 or m.max(initial=0) > 1:
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        m = m.astype(np.uint8)
    return np.ascontiguousarray(m)


def _as_label(label):
    lab = np.asarray(label)
    if lab.ndim != 3 or lab.shape[2] != N_CHANNELS:
        raise ValueError(f"label must have shape (H, W, {N_CHANNELS}), got {lab.shape}")
    return np.ascontiguousarray(lab != 0, dtype=np.uint8)


def encode(mask):
    """Mask (H, W) -> connectivity label (H, W, 8). Out-of-bounds counts as background."""
    return kernels.c3p_encode(_as_mask(mask), OFFSETS)


def threshold(prob, xi=0.5):
    """Binarize probabilities with the strict test ``prob > xi``."""
    if not 0.0 < xi < 1.0:
        raise ValueError(f"threshold xi must lie in (0, 1), got {xi}")
    return (np.asarray(prob) > xi).astype(np.uint8)


def decode(label):
    """Mutual-confirmation decoding of a label (H, W, 8) into a mask (H, W)."""
    return kernels.c3p_decode(_as_label(label), OFFSETS)


def downsample_mask(mask, factor):
    """OR-pool a mask over ``factor x factor`` blocks (factor a power of two)."""
    m = _as_mask(mask)
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"factor must be a power of two, got {factor}")
    if m.shape[0] % factor or m.shape[1] % factor:
        raise ValueError(f"mask shape {m.shape} not divisible by factor {factor}")
    if factor == 1:
        return m.copy()
    return kernels.or_pool(m, factor)


def isolated(mask):
    """Foreground pixels with no foreground criss-cross neighbor."""
    m = _as_mask(mask)
    return m & (encode(m).max(axis=2) == 0)


# ------------------------------------------------------------------ files

def _header(magic, shape):
    h, w, c = shape
    return magic + b"%d %d %d\n" % (h, w, c)


def _parse(data, magic):
    if not data.startswith(magic):
        raise CodecFormatError(f"bad magic, expected {magic!r}")
    end = data.find(b"\n", len(magic))
    if end < 0:
        raise CodecFormatError("missing header line")
    try:
        h, w, c = (int(v) for v in data[len(magic):end].split())
    except ValueError:
        raise CodecFormatError("malformed header line") from None
    if c != N_CHANNELS or h < 1 or w < 1:
        raise CodecFormatError(f"unsupported header {h} {w} {c}")
    return (h, w, c), data[end + 1:]


def save_label(label) -> bytes:
    lab = _as_label(label)
    return _header(LABEL_MAGIC, lab.shape) + lab.tobytes()


def load_label(data: bytes):
    shape, body = _parse(data, LABEL_MAGIC)
    n = int(np.prod(shape))
    if len(body) != n:
        raise CodecFormatError(f"label payload has {len(body)} bytes, expected {n}")
    lab = np.frombuffer(body, dtype=np.uint8).reshape(shape).copy()
    if lab.max(initial=0) > 1:
        raise CodecFormatError("label bytes must be 0 or 1")
    return lab


def save_map(prob) -> bytes:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 3 or p.shape[2] != N_CHANNELS:
        raise ValueError(f"map must have shape (H, W, {N_CHANNELS}), got {p.shape}")
    return _header(MAP_MAGIC, p.shape) + p.astype("<f8").tobytes()


def load_map(data: bytes):
    shape, body = _parse(data, MAP_MAGIC)
    n = int(np.prod(shape)) * 8
    if len(body) != n:
        raise CodecFormatError(f"map payload has {len(body)} bytes, expected {n}")
    return np.frombuffer(body, dtype="<f8").reshape(shape).astype(np.float64)
