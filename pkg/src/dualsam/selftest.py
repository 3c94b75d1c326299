"""Quick built-in checks run by ``dualsam selftest``.

Each check compares library output against a small independent
recomputation; ``run_all`` returns the number of failures.
"""
from __future__ import annotations

import numpy as np

from . import codec, imaging, metrics
from .autodiff import Parameter, Tensor, finite_diff_check
from .model import DualSAM, ModelConfig, dfam, encoder_block, inject_prompt, mcp_step
from .training import Schedule, connectivity_bce, mu

_AXIAL = [(-2, 0), (-1, 0), (0, -2), (0, -1), (0, 1), (0, 2), (1, 0), (2, 0)]


def _brute_roundtrip(mask):
    """Decoded mask from literal per-pixel neighbor enumeration."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for du, dv in _AXIAL:
                u, v = x + du, y + dv
                if 0 <= u < w and 0 <= v < h and mask[v, u]:
                    out[y, x] = 1
                    break
    return out


def check_codec(rng):
    for _ in range(50):
        h, w = rng.integers(1, 24, size=2)
        m = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        if not np.array_equal(codec.decode(codec.encode(m)), _brute_roundtrip(m)):
            return False
    return True


def check_gradients(rng):
    model = DualSAM(ModelConfig(embed_dim=8, heads=2, image_size=16, patch_size=8,
                                encoder_layers=1, injection_indices=(1,), decoder_levels=1,
                                prompt_layers=1, mlp_ratio=2, decoder_dim=4, seed=1))
    enc = model.group("alpha.enc.0.")
    for p in enc.values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    x = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    errs = [finite_diff_check(lambda t: encoder_block(t, enc, 2).sum(), x)]
    e = Tensor(rng.standard_normal((8, 4, 4)))
    g = Tensor(rng.standard_normal((4, 4, 4)), requires_grad=True)
    block = {k: Parameter(k, rng.standard_normal(s)) for k, s in
             [("fuse_w", (4, 12, 1, 1)), ("fuse_b", (4,)), ("se_down", (4, 2)), ("se_up", (2, 4)),
              ("dil_w", (4, 4, 3, 3)), ("dil_b", (4,))]}
    errs.append(finite_diff_check(lambda t: dfam(e, t, block).sum(), g))
    gate = Parameter("gate", 0.3)
    p = Tensor(rng.standard_normal((4, 8)))
    errs.append(finite_diff_check(lambda t: inject_prompt(Tensor(np.ones((4, 8))), p, t).sum(), gate))
    mcp = model.group("prompt.mcp.0.")
    trans = [model.group("prompt.trans.0.")]
    xa = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    xb, st = Tensor(rng.standard_normal((4, 8))), Tensor(rng.standard_normal((4, 8)))
    errs.append(finite_diff_check(lambda t: mcp_step(t, xb, st, mcp, trans, 2)[0].sum(), xa))
    target = (rng.random((3, 3, 8)) > 0.5).astype(float)
    pred = Tensor(rng.uniform(0.05, 0.95, (3, 3, 8)), requires_grad=True)
    errs.append(finite_diff_check(lambda t: connectivity_bce(t, target), pred))
    return max(errs) < 1e-6


def check_schedule(_rng):
    s = Schedule(50)
    vals = [mu(t, s) for t in range(51)]
    return (vals[-1] == 0.1 and abs(vals[0] - 6.737947e-4) < 1e-12
            and all(b > a for a, b in zip(vals, vals[1:])))


def check_metrics(rng):
    gt = np.zeros((2, 2), np.uint8)
    gt[0] = 1
    pred = np.zeros((2, 2), np.uint8)
    pred[0, 0] = 1
    if metrics.f_beta(pred, gt, 0.3) != 0.8125:
        return False
    for _ in range(50):
        p = rng.random((6, 5)) < 0.5
        g = rng.random((6, 5)) < 0.5
        g[0, 0] = True
        inter = sum(bool(a and b) for a, b in zip(p.ravel(), g.ravel()))
        union = sum(bool(a or b) for a, b in zip(p.ravel(), g.ravel()))
        if abs(metrics.iou(p, g) - inter / union) > 1e-12:
            return False
    return True


def check_gamma(_rng):
    img = np.full((4, 4, 3), 0.25)
    out = imaging.gamma_correct(img, imaging.gray_stats(img))
    mid = np.full((4, 4, 3), 0.5)
    same = imaging.gamma_correct(mid, imaging.gray_stats(mid))
    return np.abs(out - 0.01).max() < 1e-12 and np.array_equal(same, mid)


CHECKS = [("codec round trip vs brute force", check_codec),
          ("gradient checks", check_gradients),
          ("schedule endpoints", check_schedule),
          ("metric oracle", check_metrics),
          ("gamma closed form", check_gamma)]


def run_all(emit=print, seed=0):
    failures = 0
    for name, check in CHECKS:
        try:
            ok = bool(check(np.random.default_rng(seed)))
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        failures += not ok
        emit(f"{'PASS' if ok else 'FAIL'} {name}")
    return failures

