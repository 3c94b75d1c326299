"""Pure-numpy versions of the hot loops. Always importable."""
import numpy as np


def im2col(xp, kh, kw, dilation, out_h, out_w):
    """Unfold a padded (B, C, Hp, Wp) batch into (B, C*kh*kw, out_h*out_w)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh, kw, out_h, out_w), dtype=xp.dtype)
    for i in range(kh):
        y0 = i * dilation
        for j in range(kw):
            x0 = j * dilation
            cols[:, :, i, j] = xp[:, :, y0:y0 + out_h, x0:x0 + out_w]
    return cols.reshape(b, c * kh * kw, out_h * out_w)


def col2im(cols, channels, hp, wp, kh, kw, dilation, out_h, out_w):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the padded grid."""
    b = cols.shape[0]
    cols = cols.reshape(b, channels, kh, kw, out_h, out_w)
    out = np.zeros((b, channels, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        y0 = i * dilation
        for j in range(kw):
            x0 = j * dilation
            out[:, :, y0:y0 + out_h, x0:x0 + out_w] += cols[:, :, i, j]
    return out


def _shifted(a, du, dv):
    """Return (a[h+dv, w+du], in_bounds) with zeros outside the grid."""
    h, w = a.shape[:2]
    out = np.zeros_like(a)
    inside = np.zeros((h, w), dtype=bool)
    ys = slice(max(0, -dv), min(h, h - dv))
    xs = slice(max(0, -du), min(w, w - du))
    ys_src = slice(max(0, dv), min(h, h + dv))
    xs_src = slice(max(0, du), min(w, w + du))
    out[ys, xs] = a[ys_src, xs_src]
    inside[ys, xs] = True
    return out, inside


def c3p_encode(mask, offsets):
    h, w = mask.shape
    label = np.zeros((h, w, len(offsets)), dtype=np.uint8)
    for c, (du, dv) in enumerate(offsets):
        nb, _ = _shifted(mask, int(du), int(dv))
        label[:, :, c] = mask & nb
    return label


def c3p_decode(label, offsets):
    h, w, n = label.shape
    mask = np.zeros((h, w), dtype=np.uint8)
    for c, (du, dv) in enumerate(offsets):
        nb, _ = _shifted(label[:, :, n - 1 - c], int(du), int(dv))
        mask |= label[:, :, c] & nb
    return mask


def or_pool(mask, factor):
    h, w = mask.shape
    blocks = mask.reshape(h // factor, factor, w // factor, factor)
    return blocks.max(axis=(1, 3)).astype(np.uint8)
