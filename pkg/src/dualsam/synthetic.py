"""Procedural foreground/background scenes with exact masks.

Each sample is drawn from ``numpy.random.default_rng([seed, index])``, so a
sample depends only on its seed and index and regenerates bit-identically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import RawImage, quantize


@dataclass(frozen=True)
class SynthConfig:
    size: int = 64
    gap: float = 0.4          # foreground minus background mean intensity, before darkening
    darkening: float = 0.5    # global illumination factor
    noise: float = 0.05       # half-width of the additive uniform noise
    min_shapes: int = 1
    max_shapes: int = 3
    min_radius: float = 6.0
    max_radius: float = 16.0
    margin: int = 8           # shape centers stay this far from the border

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be positive")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 1 <= min_shapes <= max_shapes")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("need 0 < min_radius <= max_radius")
        if self.noise < 0 or not 0 < self.darkening <= 1:
            raise ValueError("noise must be >= 0 and darkening in (0, 1]")


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float = 0.0

    def raster(self, size):
        y, x = np.mgrid[0:size, 0:size].astype(np.float64)
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = (x - self.cx) * c + (y - self.cy) * s
        v = -(x - self.cx) * s + (y - self.cy) * c
        return (u / self.rx) ** 2 + (v / self.ry) ** 2 <= 1.0


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle covering pixels x0..x1, y0..y1 inclusive."""
    x0: int
    y0: int
    x1: int
    y1: int

    def raster(self, size):
        m = np.zeros((size, size), dtype=bool)
        m[max(self.y0, 0):max(self.y1 + 1, 0), max(self.x0, 0):max(self.x1 + 1, 0)] = True
        return m


@dataclass(frozen=True)
class SyntheticSample:
    image: RawImage
    mask: np.ndarray   # (H, W) uint8 in {0, 1}
    seed: int
    index: int
    shapes: tuple = ()


def random_shapes(rng, cfg: SynthConfig):
    n = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    lo, hi = cfg.margin, cfg.size - cfg.margin
    shapes = []
    for _ in range(n):
        cx, cy = rng.uniform(lo, hi, size=2)
        rx, ry = rng.uniform(cfg.min_radius, cfg.max_radius, size=2)
        if rng.random() < 0.5:
            shapes.append(Ellipse(cx, cy, rx, ry, rng.uniform(0.0, math.pi)))
        else:
            shapes.append(Rect(int(round(cx - rx)), int(round(cy - ry)),
                               int(round(cx + rx)), int(round(cy + ry))))
    return tuple(shapes)


def rasterize(shapes, size):
    mask = np.zeros((size, size), dtype=bool)
    for s in shapes:
        mask |= s.raster(size)
    return mask.astype(np.uint8)


def render(shapes, rng, cfg: SynthConfig):
    """Paint ``shapes`` over a tinted background; returns (RawImage, mask)."""
    mask = rasterize(shapes, cfg.size)
    bg = rng.uniform(0.15, 0.45)
    tint = rng.uniform(0.6, 1.0, size=3)
    tint[2] = 1.0  # keep the blue channel as the reference, water-like cast
    level = np.where(mask[:, :, None] == 1, bg + cfg.gap, bg)
    img = np.clip(level, 0.0, 1.0) * tint * cfg.darkening
    if cfg.noise > 0:
        img = img + rng.uniform(-cfg.noise, cfg.noise, size=img.shape)
    return quantize(np.clip(img, 0.0, 1.0)), mask


def make_sample(seed, index, cfg: SynthConfig | None = None):
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng([seed, index])
    shapes = random_shapes(rng, cfg)
    image, mask = render(shapes, rng, cfg)
    return SyntheticSample(image, mask, seed, index, shapes)


def gen_synthetic(seed, count, cfg: SynthConfig | None = None, start=0):
    """Samples ``start .. start+count-1`` of the stream identified by ``seed``."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    return [make_sample(seed, start + i, cfg) for i in range(count)]
