"""numba-compiled versions of the hot loops (same signatures as ``_numpy``)."""
import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(xp, kh, kw, dilation, out_h, out_w):
    b, c = xp.shape[0], xp.shape[1]
    cols = np.empty((b, c * kh * kw, out_h * out_w), dtype=xp.dtype)
    for n in range(b):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(out_h):
                        src_y = y + i * dilation
                        base = y * out_w
                        for x in range(out_w):
                            cols[n, row, base + x] = xp[n, ch, src_y, x + j * dilation]
    return cols


@njit(cache=True)
def _col2im(cols, channels, hp, wp, kh, kw, dilation, out_h, out_w):
    b = cols.shape[0]
    out = np.zeros((b, channels, hp, wp), dtype=cols.dtype)
    for n in range(b):
        for ch in range(channels):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for y in range(out_h):
                        dst_y = y + i * dilation
                        base = y * out_w
                        for x in range(out_w):
                            out[n, ch, dst_y, x + j * dilation] += cols[n, row, base + x]
    return out


@njit(cache=True)
def _encode(mask, offsets):
    h, w = mask.shape
    k = offsets.shape[0]
    label = np.zeros((h, w, k), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            for c in range(k):
                u = x + offsets[c, 0]
                v = y + offsets[c, 1]
                if 0 <= u < w and 0 <= v < h and mask[v, u] != 0:
                    label[y, x, c] = 1
    return label


@njit(cache=True)
def _decode(label, offsets):
    h, w, k = label.shape
    mask = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            for c in range(k):
                if label[y, x, c] == 0:
                    continue
                u = x + offsets[c, 0]
                v = y + offsets[c, 1]
                if 0 <= u < w and 0 <= v < h and label[v, u, k - 1 - c] != 0:
                    mask[y, x] = 1
                    mask[v, u] = 1
                    break
    return mask


@njit(cache=True)
def _or_pool(mask, factor):
    h, w = mask.shape
    out = np.zeros((h // factor, w // factor), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0:
                out[y // factor, x // factor] = 1
    return out


def im2col(xp, kh, kw, dilation, out_h, out_w):
    return _im2col(np.ascontiguousarray(xp), kh, kw, dilation, out_h, out_w)


def col2im(cols, channels, hp, wp, kh, kw, dilation, out_h, out_w):
    return _col2im(np.ascontiguousarray(cols), channels, hp, wp, kh, kw,
                   dilation, out_h, out_w)


def c3p_encode(mask, offsets):
    return _encode(np.ascontiguousarray(mask, dtype=np.uint8),
                   np.ascontiguousarray(offsets, dtype=np.int64))


def c3p_decode(label, offsets):
    return _decode(np.ascontiguousarray(label, dtype=np.uint8),
                   np.ascontiguousarray(offsets, dtype=np.int64))


def or_pool(mask, factor):
    return _or_pool(np.ascontiguousarray(mask, dtype=np.uint8), factor)
