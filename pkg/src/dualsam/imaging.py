"""Image I/O (binary PGM/PPM), grayscale statistics, gamma correction, resizing.

Normalized images are plain float64 arrays of shape (H, W, C) with values in
[0, 1]; raw images keep the 8-bit pixels together with their geometry.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import _interp

GAMMA_VARIANTS = ("as-written", "standard-agc")
LUMA = (0.299, 0.587, 0.114)


class PNMError(ValueError):
    """Base class for PGM/PPM parse failures."""


class UnsupportedMagicError(PNMError):
    pass


class MaxvalError(PNMError):
    pass


class TruncatedError(PNMError):
    pass


class HeaderError(PNMError):
    pass


class DegenerateStatsError(ValueError):
    """Mean gray level at 0 or 255 leaves the gamma coefficient undefined."""


@dataclass(frozen=True)
class RawImage:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # (height, width, channels) uint8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        px = np.asarray(self.pixels)
        if px.shape != (self.height, self.width, self.channels) or px.dtype != np.uint8:
            raise ValueError(
                f"pixels must be uint8 of shape {(self.height, self.width, self.channels)}, "
                f"got {px.dtype} {px.shape}")

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return cls(arr.shape[1], arr.shape[0], arr.shape[2], np.ascontiguousarray(arr, dtype=np.uint8))

    def normalized(self):
        return self.pixels.astype(np.float64) / 255.0


@dataclass(frozen=True)
class GrayStats:
    mean_gray: float


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_pnm(data: bytes) -> RawImage:
    """Parse a binary P5 (gray) or P6 (RGB) image with maxval 255."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedMagicError(f"unsupported magic {magic!r}; only P5 and P6 are read")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise HeaderError("header ended before width, height and maxval were read")
        tok = m.group(1)
        if not tok.isdigit():
            raise HeaderError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
        pos = m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise MaxvalError(f"maxval must be 255, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise HeaderError("missing whitespace after maxval")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise TruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()
    return RawImage(width, height, channels, pixels)


def save_pnm(img: RawImage) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def read_pnm(path) -> RawImage:
    with open(path, "rb") as fh:
        return load_pnm(fh.read())


def write_pnm(path, img: RawImage):
    with open(path, "wb") as fh:
        fh.write(save_pnm(img))


def to_gray(img: RawImage):
    """Luma conversion (rounded half up) plus the exact pre-rounding mean."""
    if img.channels == 1:
        return img, GrayStats(float(img.pixels.mean()))
    px = img.pixels.astype(np.float64)
    luma = LUMA[0] * px[..., 0] + LUMA[1] * px[..., 1] + LUMA[2] * px[..., 2]
    gray = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)
    return RawImage(img.width, img.height, 1, gray[:, :, None]), GrayStats(float(luma.mean()))


def gray_stats(norm: np.ndarray) -> GrayStats:
    """GrayStats of a normalized (H, W, C) image, on the 0..255 scale."""
    norm = np.asarray(norm, dtype=np.float64)
    if norm.ndim == 2 or norm.shape[-1] == 1:
        return GrayStats(float(norm.mean() * 255.0))
    luma = LUMA[0] * norm[..., 0] + LUMA[1] * norm[..., 1] + LUMA[2] * norm[..., 2]
    return GrayStats(float(luma.mean() * 255.0))


def gamma_coefficient(mean_gray, variant="as-written"):
    """Gamma driven by the mean gray level.

    ``as-written``: ``log10(0.5) - log10(m/255)``, applied as the 1/gamma power.
    ``standard-agc``: ``log10(0.5) / log10(m/255)``, applied as the gamma power.
    """
    if variant not in GAMMA_VARIANTS:
        raise ValueError(f"unknown gamma variant {variant!r}; expected one of {GAMMA_VARIANTS}")
    if not 0.0 < mean_gray < 255.0:
        raise DegenerateStatsError(f"mean gray {mean_gray} must lie strictly inside (0, 255)")
    ratio = mean_gray / 255.0
    if variant == "as-written":
        return math.log10(0.5) - math.log10(ratio)
    return math.log10(0.5) / math.log10(ratio)


def gamma_correct(img, stats: GrayStats, variant="as-written"):
    """Illumination compensation by a power law set from the mean gray level.

    Returns the input unchanged when the exponent is degenerate (gamma ~ 0
    for ``as-written``, gamma ~ 1 for ``standard-agc``). Zeros are lifted to
    1/255 before exponentiation; the result is clipped to [0, 1], which
    saturates bright images under ``as-written`` where gamma turns negative.
    """
    img = np.asarray(img, dtype=np.float64)
    gamma = gamma_coefficient(stats.mean_gray, variant)
    if variant == "as-written":
        if abs(gamma) < 1e-6:
            return img.copy()
        exponent = 1.0 / gamma
    else:
        if abs(gamma - 1.0) < 1e-6:
            return img.copy()
        exponent = gamma
    base = np.clip(img, 1.0 / 255.0, 1.0)
    # near mid-gray the as-written exponent is huge; overflow saturates to 1
    with np.errstate(over="ignore"):
        return np.clip(base ** exponent, 0.0, 1.0)


def resize_bilinear(img, new_w, new_h):
    """Half-pixel-center bilinear resize of an (H, W) or (H, W, C) array."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    img = np.asarray(img, dtype=np.float64)
    out = _interp.resample(img, new_h, axis=0)
    return _interp.resample(out, new_w, axis=1)


def quantize(norm) -> RawImage:
    """Round a [0, 1] float image to 8-bit."""
    px = np.clip(np.floor(np.asarray(norm) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return RawImage.from_array(px)
