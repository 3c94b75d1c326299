"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and that touch at
least one tensor with ``requires_grad``, are appended to the tape together
with their backward rule. Outside a tape everything runs eagerly with no
bookkeeping, which is what the finite-difference checker relies on.

Leading batch axes are supported by the ops the model needs (matmul,
conv2d, pooling, upsampling); elementwise binary ops follow numpy
broadcasting and reduce gradients back to the operand shapes.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

from . import _interp, kernels

__all__ = [
    "DimensionError", "Tensor", "Parameter", "Tape", "tensor", "constant",
    "matmul", "add", "mul", "softmax", "layer_norm", "gelu", "sigmoid",
    "conv2d", "global_avg_pool", "upsample2x", "concat", "reshape",
    "transpose", "tsum", "bce_sum", "backward", "finite_diff_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64, copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis, keepdims) * (1.0 / n)


class Parameter(Tensor):
    """Named leaf tensor. Frozen parameters never require gradients."""

    __slots__ = ("name", "frozen")

    def __init__(self, name, data, frozen=False):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=not frozen)
        self.name = name
        self.frozen = bool(frozen)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def constant(data):
    return Tensor(data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------- tape

@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence]


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; tapes nest per thread, the innermost being
    active. ``records`` is in execution (hence topological) order.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[_Record] = []

    @classmethod
    def current(cls):
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self):
        if not hasattr(self._local, "stack"):
            self._local.stack = []
        self._local.stack.append(self)
        return self

    def __exit__(self, *exc):
        self._local.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss):
        backward(self, loss)


def _result(data, inputs, rule):
    out = Tensor(data)
    tape = Tape.current()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(_Record(tuple(inputs), out, rule))
    return out


def backward(tape: Tape, loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tape tensor that needs it."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        _store(rec.output, g)
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                owners[key] = inp
    # whatever is left are leaves (or the loss itself if nothing was recorded)
    for key, g in grads.items():
        _store(owners[key], g)


def _store(t, g):
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------- elementwise ops

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    def rule(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(out, (a, b), rule)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = x.data * cdf

    def rule(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return _result(out, (x,), rule)


def sigmoid(x):
    out = expit(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis=-1):
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), rule)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis (population variance), then scale and shift."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def rule(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gain, bias), rule)


def bce_sum(pred, target, eps=1e-7):
    """Unreduced binary cross-entropy against a constant target.

    ``pred`` is clamped to ``[eps, 1 - eps]`` before the logs; the clamp
    passes zero gradient where it is active.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(f"bce shapes differ: prediction {pred.shape}, target {target.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    out = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).sum()

    def rule(g):
        inside = (pred.data >= eps) & (pred.data <= 1.0 - eps)
        return (g * inside * ((1.0 - target) / (1.0 - p) - target / p),)

    return _result(np.asarray(out), (pred,), rule)


# ------------------------------------------------------------ shape ops

def reshape(x, shape):
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _result(out, (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def tsum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _result(np.asarray(out), (x,), rule)


# ----------------------------------------------------------- linear algebra

def matmul(a, b):
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _result(out, (a, b), rule)


def _batched(x, spatial_ndim):
    """View x with exactly one leading batch axis; returns (data, had_batch)."""
    if x.ndim == spatial_ndim:
        return x.data[None], False
    if x.ndim == spatial_ndim + 1:
        return x.data, True
    raise DimensionError(f"expected {spatial_ndim} or {spatial_ndim + 1} dims, got shape {x.shape}")


def conv2d(x, kernel, bias=None, dilation=1, padding=0):
    """Zero-padded cross-correlation of (C,H,W) or (B,C,H,W) input."""
    xb, batched = _batched(x, 3)
    if kernel.ndim != 4 or kernel.shape[1] != xb.shape[1]:
        raise DimensionError(f"conv2d kernel {kernel.shape} incompatible with input {x.shape}")
    if dilation < 1 or padding < 0:
        raise ValueError("dilation must be >= 1 and padding >= 0")
    b, c, h, w = xb.shape
    co, _, kh, kw = kernel.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh, ow = hp - dilation * (kh - 1), wp - dilation * (kw - 1)
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"conv2d kernel {kernel.shape} (dilation {dilation}) exceeds padded input {(hp, wp)}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d bias {bias.shape} does not match {co} output channels")

    pointwise = kh == 1 and kw == 1 and padding == 0
    if pointwise:
        cols = xb.reshape(b, c, h * w)
    else:
        xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
        cols = kernels.im2col(xp, kh, kw, dilation, oh, ow)
    wmat = kernel.data.reshape(co, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(b, co, oh, ow)
    if not batched:
        out = out[0]

    def rule(g):
        gb = g.reshape(b, co, oh * ow)
        gk = np.tensordot(gb, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape) \
            if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gb)
            if pointwise:
                gx = gcols.reshape(b, c, h, w)
            else:
                gx = kernels.col2im(gcols, c, hp, wp, kh, kw, dilation, oh, ow)
                gx = gx[:, :, padding:padding + h, padding:padding + w]
            gx = gx.reshape(x.shape)
        gbias = gb.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        return (gx, gk) if bias is None else (gx, gk, gbias)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, inputs, rule)


def global_avg_pool(x):
    """Per-channel spatial mean of (C,H,W) -> (C) or (B,C,H,W) -> (B,C)."""
    if x.ndim not in (3, 4):
        raise DimensionError(f"global_avg_pool expects (C,H,W) or (B,C,H,W), got {x.shape}")
    h, w = x.shape[-2:]
    if h == 0 or w == 0:
        raise DimensionError("global_avg_pool over an empty spatial extent")
    out = x.data.mean(axis=(-2, -1))

    def rule(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), x.shape).copy(),)

    return _result(out, (x,), rule)


def upsample2x(x):
    """Bilinear 2x upsampling (half-pixel centers, clamped borders) of the last two axes."""
    if x.ndim < 2:
        raise DimensionError(f"upsample2x needs at least 2 dims, got {x.shape}")
    h, w = x.shape[-2:]
    out = _interp.resample(_interp.resample(x.data, 2 * h, axis=-2), 2 * w, axis=-1)

    def rule(g):
        ah, aw = _interp.matrix(h, 2 * h), _interp.matrix(w, 2 * w)
        return (ah.T @ g @ aw,)

    return _result(out, (x,), rule)


# ------------------------------------------------------ gradient checking

def finite_diff_check(f, x, eps=1e-5):
    """Largest relative disagreement between autodiff and central differences.

    ``f`` maps the leaf tensor ``x`` to a scalar tensor. The error of each
    coordinate is ``|g_auto - g_fd| / max(1, |g_fd|)``. ``x.data`` is
    perturbed in place and restored. Gradients of other leaves touched by
    ``f`` are accumulated as a side effect.
    """
    if not eps > 0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs a tensor with requires_grad=True")
    x.data = np.array(x.data, dtype=np.float64, copy=True)
    x.grad = None
    with Tape() as tape:
        y = f(x)
    if y.size != 1:
        raise DimensionError(f"finite_diff_check needs a scalar function, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise FloatingPointError("non-finite function value at the base point")
    backward(tape, y)
    auto = np.zeros(x.shape) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f(x).data)
        flat[i] = orig - eps
        down = float(f(x).data)
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise FloatingPointError(f"non-finite function value while perturbing coordinate {i}")
        numeric[i] = (up - down) / (2.0 * eps)
    err = np.abs(auto.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
