"""Toy-scale dual-branch segmentation network.

Two encoders (original image and its gamma-corrected copy) built from frozen
stand-in transformer blocks with trainable low-rank query/value deltas and a
trainable FFN adapter; a shared prompt stream that cross-attends both
branches and injects gated prompts back into each encoder; and per-branch
pyramid decoders of dilated fusion blocks ending in sigmoid heads.

Token tensors are (B, N, D); spatial tensors are (B, C, H, W). The block
functions also accept unbatched inputs.
"""
from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np

from . import codec
from .autodiff import (DimensionError, Parameter, Tensor, concat, conv2d, gelu,
                       global_avg_pool, layer_norm, matmul, sigmoid, softmax,
                       upsample2x)
from .imaging import GAMMA_VARIANTS, RawImage, gamma_correct, gray_stats

HEAD_KINDS = ("c3p", "pixel")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 32
    heads: int = 4
    encoder_layers: int = 4
    lora_rank: int = 4
    adapter_dim: int = 8
    prompt_layers: int = 4
    injection_indices: tuple = (1, 2, 3, 4)
    decoder_levels: int = 4
    seed: int = 0
    # width of the frozen stand-in FFNs, as a multiple of embed_dim
    mlp_ratio: int = 8
    # width of the trainable prompt-stream FFNs
    prompt_mlp_ratio: int = 1
    decoder_dim: int = 16
    se_reduction: int = 4
    gamma_variant: str = "as-written"
    head: str = "c3p"
    dual: bool = True
    use_mcp: bool = True
    use_dfam: bool = True
    use_lora: bool = True
    use_adapter: bool = True

    def __post_init__(self):
        object.__setattr__(self, "injection_indices", tuple(int(i) for i in self.injection_indices))
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        inj = self.injection_indices
        if len(inj) != self.decoder_levels:
            raise ValueError("injection_indices must have one entry per decoder level")
        if any(b <= a for a, b in zip(inj, inj[1:])) or inj[0] < 1 or inj[-1] > self.encoder_layers:
            raise ValueError(f"injection_indices {inj} must increase strictly within 1..{self.encoder_layers}")
        if self.prompt_layers % self.decoder_levels:
            raise ValueError("prompt_layers must be a multiple of decoder_levels")
        ratio = self.image_size / self.level_size(self.decoder_levels)
        if ratio < 1 or ratio != int(ratio) or int(ratio) & (int(ratio) - 1):
            raise ValueError("finest decoder level must divide image_size by a power of two")
        if self.decoder_dim // self.se_reduction < 1:
            raise ValueError("squeeze-excite bottleneck must be at least 1 channel")
        if self.gamma_variant not in GAMMA_VARIANTS:
            raise ValueError(f"gamma_variant must be one of {GAMMA_VARIANTS}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.grid ** 2

    @property
    def out_channels(self):
        return codec.N_CHANNELS if self.head == "c3p" else 1

    def level_size(self, level):
        """Spatial size of decoder level ``level`` (1-based, coarse to fine)."""
        return self.grid * 2 ** (level - 1)

    def to_dict(self):
        d = asdict(self)
        d["injection_indices"] = list(self.injection_indices)
        return d

    @classmethod
    def from_dict(cls, d):
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, val in d.items():
            if key not in kinds:
                continue
            default = getattr(cls, key, None) if key != "injection_indices" else ()
            if key == "injection_indices":
                if isinstance(val, str):
                    val = [int(v) for v in val.replace(",", " ").split()]
                out[key] = tuple(val)
            elif isinstance(default, bool):
                out[key] = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                out[key] = int(val)
            else:
                out[key] = str(val)
        return cls(**out)


@dataclass
class BranchOutputs:
    maps: list = field(default_factory=list)       # per level (B, K, s, s), coarse -> fine
    features: list = field(default_factory=list)   # prompted features E_i, (B, N, D)
    encoder: list = field(default_factory=list)    # encoder outputs X_j before injection


# ------------------------------------------------------------ block functions

def _lift(x, ndim):
    """Add a batch axis to an unbatched tensor; returns (tensor, squeeze_back)."""
    if x.ndim == ndim - 1:
        return x.reshape((1,) + x.shape), True
    if x.ndim != ndim:
        raise DimensionError(f"expected {ndim - 1} or {ndim} dims, got shape {x.shape}")
    return x, False


def _drop(x, squeeze):
    return x.reshape(x.shape[1:]) if squeeze else x


def patch_embed(images, weight, bias, patch):
    """Non-overlapping patch flattening (C, p, p order) and a linear projection.

    ``images`` is (C, H, W) or (B, C, H, W); returns (N, D) or (B, N, D).
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    x, squeeze = _lift(x, 4)
    b, c, h, w = x.shape
    if h % patch or w % patch:
        raise DimensionError(f"image {h}x{w} not divisible into {patch}x{patch} patches")
    if weight.shape[0] != c * patch * patch:
        raise DimensionError(f"patch weight {weight.shape} expects {weight.shape[0]} inputs, "
                             f"patches have {c * patch * patch}")
    gh, gw = h // patch, w // patch
    tok = x.reshape(b, c, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    tok = tok.reshape(b, gh * gw, c * patch * patch)
    return _drop(matmul(tok, weight) + bias, squeeze)


def attention(q, k, v, heads):
    """Scaled dot-product attention split over ``heads`` on (B, N, D) inputs."""
    b, n, d = q.shape
    dh = d // heads

    def split(t):
        return t.reshape(b, t.shape[1], heads, dh).transpose(0, 2, 1, 3)

    scores = matmul(split(q), split(k).transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    out = matmul(softmax(scores, axis=-1), split(v))
    return out.transpose(0, 2, 1, 3).reshape(b, n, d)


def ffn(x, p, prefix="ffn_"):
    return matmul(gelu(matmul(x, p[prefix + "w1"]) + p[prefix + "b1"]), p[prefix + "w2"]) + p[prefix + "b2"]


def encoder_block(x, p: Mapping, heads, lora=True, adapter=True):
    """Adapter-augmented encoder layer.

    Q and V carry low-rank trainable deltas over frozen projections; the
    FFN output reaches the residual stream through the bottleneck adapter::

        H   = MHSA(Q, K, V) + x
        out = gelu(FFN(LN(H)) @ adapter_down) @ adapter_up + H

    With ``lora``/``adapter`` off (or their up-projections zero) the layer
    reduces to the frozen attention-plus-residual block.
    """
    x, squeeze = _lift(x, 3)
    if x.shape[-1] != p["w_q"].shape[0]:
        raise DimensionError(f"encoder input {x.shape} does not match embedding {p['w_q'].shape[0]}")
    q = matmul(x, p["w_q"])
    v = matmul(x, p["w_v"])
    if lora:
        q = q + matmul(matmul(x, p["lora_q_down"]), p["lora_q_up"])
        v = v + matmul(matmul(x, p["lora_v_down"]), p["lora_v_up"])
    k = matmul(x, p["w_k"])
    h = matmul(attention(q, k, v, heads), p["w_o"]) + x
    if adapter:
        z = ffn(layer_norm(h, p["ln_g"], p["ln_b"]), p)
        h = matmul(gelu(matmul(z, p["adapter_down"])), p["adapter_up"]) + h
    return _drop(h, squeeze)


def transformer_block(x, p: Mapping, heads):
    """Standard pre-norm transformer layer (prompt stream)."""
    x, squeeze = _lift(x, 3)
    h = x + matmul(attention(*(matmul(layer_norm(x, p["ln1_g"], p["ln1_b"]), p[w])
                               for w in ("w_q", "w_k", "w_v")), heads), p["w_o"])
    return _drop(h + ffn(layer_norm(h, p["ln2_g"], p["ln2_b"]), p), squeeze)


def mcp_step(x_alpha, x_beta, state, p: Mapping, trans: list, heads):
    """One coupled-prompt level.

    Advances the prompt stream through its transformer layers, cross-attends
    with queries from ``x_alpha``, keys from ``x_beta`` and values from the
    advanced stream, and projects the result into one prompt per branch.
    Returns ``(p_alpha, p_beta, next_state)``; ``p_beta`` is None when the
    parameters carry no beta projection (single-branch models).
    """
    x_alpha, sq = _lift(x_alpha, 3)
    x_beta, _ = _lift(x_beta, 3)
    state, _ = _lift(state, 3)
    if not (x_alpha.shape == x_beta.shape == state.shape):
        raise DimensionError(
            f"mcp_step shapes differ: {x_alpha.shape}, {x_beta.shape}, {state.shape}")
    for block in trans:
        state = transformer_block(state, block, heads)
    q = matmul(x_alpha, p["w_q"])
    k = matmul(x_beta, p["w_k"])
    v = matmul(state, p["w_v"])
    h = matmul(attention(q, k, v, heads), p["w_o"]) + state
    pw = ffn(layer_norm(h, p["ln_g"], p["ln_b"]), p) + h
    p_alpha = matmul(pw, p["fc_a_w"]) + p["fc_a_b"]
    p_beta = matmul(pw, p["fc_b_w"]) + p["fc_b_b"] if "fc_b_w" in p else None
    return (_drop(p_alpha, sq), None if p_beta is None else _drop(p_beta, sq), _drop(state, sq))


def inject_prompt(x, p, g):
    """Gated additive prompt: ``x + g * p``."""
    if x.shape != p.shape:
        raise DimensionError(f"prompt shape {p.shape} does not match features {x.shape}")
    return x + g * p


def dfam(e, g_prev, p: Mapping, attention_block=True):
    """Dilated fusion block: (C_e + C_g, H, W) -> (C_out, 2H, 2W).

    1x1 fusion with GELU, squeeze-excite channel weights applied as
    ``w * F + F``, a 3x3 dilation-2 convolution with GELU, then bilinear 2x
    upsampling. ``attention_block=False`` keeps only the fusion and upsampling.
    """
    e, squeeze = _lift(e, 4)
    g_prev, _ = _lift(g_prev, 4)
    if e.shape[0] != g_prev.shape[0] or e.shape[2:] != g_prev.shape[2:]:
        raise DimensionError(f"dfam inputs disagree spatially: {e.shape} vs {g_prev.shape}")
    fr = gelu(conv2d(concat([e, g_prev], axis=1), p["fuse_w"], p["fuse_b"]))
    if not attention_block:
        return _drop(upsample2x(fr), squeeze)
    b, c = fr.shape[:2]
    wg = sigmoid(matmul(gelu(matmul(global_avg_pool(fr), p["se_down"])), p["se_up"]))
    f = fr * wg.reshape(b, c, 1, 1) + fr
    out = upsample2x(gelu(conv2d(f, p["dil_w"], p["dil_b"], dilation=2, padding=2)))
    return _drop(out, squeeze)


def tokens_to_spatial(x, grid):
    b, n, d = x.shape
    if n != grid * grid:
        raise DimensionError(f"{n} tokens do not form a {grid}x{grid} grid")
    return x.transpose(0, 2, 1).reshape(b, d, grid, grid)


# ------------------------------------------------------------------ model

def _orthogonal(rng, rows, cols, gain=1.0):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class DualSAM:
    """Parameter container plus forward pass for one configuration."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig()
        self.params: dict[str, Parameter] = {}
        self._init_params(np.random.default_rng(self.config.seed))

    # -- parameters -------------------------------------------------------

    def _add(self, name, data, frozen):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = Parameter(name, data, frozen=frozen)

    def _init_params(self, rng):
        cfg = self.config
        d, p = cfg.embed_dim, cfg.patch_size
        branches = ("alpha", "beta") if cfg.dual else ("alpha",)
        for b in branches:
            self._add(f"{b}.embed.w", _orthogonal(rng, 3 * p * p, d, math.sqrt(3 * p * p / d)), True)
            self._add(f"{b}.embed.b", np.zeros(d), True)
            self._add(f"{b}.pos", 0.5 * rng.standard_normal((cfg.tokens, d)), True)
            for j in range(cfg.encoder_layers):
                pre = f"{b}.enc.{j}."
                for w in ("w_q", "w_k", "w_v", "w_o"):
                    self._add(pre + w, _orthogonal(rng, d, d), True)
                self._init_ffn(rng, pre, cfg.mlp_ratio, frozen=True)
                if cfg.use_lora:
                    for w in ("q", "v"):
                        self._add(f"{pre}lora_{w}_down", 0.1 * rng.standard_normal((d, cfg.lora_rank)), False)
                        self._add(f"{pre}lora_{w}_up", np.zeros((cfg.lora_rank, d)), False)
                if cfg.use_adapter:
                    self._add(pre + "adapter_down", 0.1 * rng.standard_normal((d, cfg.adapter_dim)), False)
                    self._add(pre + "adapter_up", np.zeros((cfg.adapter_dim, d)), False)
        if cfg.use_mcp:
            self._init_prompt_stream(rng, branches)
        for b in branches:
            self._init_decoder(rng, b)

    def _init_ffn(self, rng, pre, ratio, frozen, ln=("ln_g", "ln_b")):
        d = self.config.embed_dim
        hid = d * ratio
        self._add(pre + ln[0], np.ones(d), frozen)
        self._add(pre + ln[1], np.zeros(d), frozen)
        self._add(pre + "ffn_w1", _orthogonal(rng, d, hid, math.sqrt(2.0)), frozen)
        self._add(pre + "ffn_b1", np.zeros(hid), frozen)
        self._add(pre + "ffn_w2", _orthogonal(rng, hid, d, math.sqrt(d / hid)), frozen)
        self._add(pre + "ffn_b2", np.zeros(d), frozen)

    def _init_prompt_stream(self, rng, branches):
        cfg = self.config
        d, p = cfg.embed_dim, cfg.patch_size
        fan = 6 * p * p
        self._add("prompt.embed.w", rng.standard_normal((fan, d)) / math.sqrt(fan), False)
        self._add("prompt.embed.b", np.zeros(d), False)
        self._add("prompt.pos", 0.5 * rng.standard_normal((cfg.tokens, d)), True)
        for t in range(cfg.prompt_layers):
            pre = f"prompt.trans.{t}."
            self._add(pre + "ln1_g", np.ones(d), True)
            self._add(pre + "ln1_b", np.zeros(d), True)
            for w in ("w_q", "w_k", "w_v", "w_o"):
                self._add(pre + w, _orthogonal(rng, d, d), True)
            self._init_ffn(rng, pre, cfg.mlp_ratio, frozen=True, ln=("ln2_g", "ln2_b"))
        for i in range(cfg.decoder_levels):
            pre = f"prompt.mcp.{i}."
            for w in ("w_q", "w_k", "w_v", "w_o"):
                self._add(pre + w, rng.standard_normal((d, d)) / math.sqrt(d), False)
            self._init_ffn(rng, pre, cfg.prompt_mlp_ratio, frozen=False)
            for b, tag in zip(branches, ("a", "b")):
                self._add(f"{pre}fc_{tag}_w", rng.standard_normal((d, d)) / math.sqrt(d), False)
                self._add(f"{pre}fc_{tag}_b", np.zeros(d), False)
            for b in branches:
                self._add(f"{b}.gate.{i}", np.zeros(()), False)

    def _init_decoder(self, rng, b):
        cfg = self.config
        d, c = cfg.embed_dim, cfg.decoder_dim
        cse = c // cfg.se_reduction
        k = cfg.out_channels
        chans = [d] + [c] * (cfg.decoder_levels - 1)
        for lvl in range(cfg.decoder_levels - 1):
            pre = f"{b}.dfam.{lvl}."
            cin = d + chans[lvl]
            self._add(pre + "fuse_w", rng.standard_normal((c, cin, 1, 1)) * math.sqrt(2.0 / cin), False)
            self._add(pre + "fuse_b", np.zeros(c), False)
            if cfg.use_dfam:
                self._add(pre + "se_down", rng.standard_normal((c, cse)) / math.sqrt(c), False)
                self._add(pre + "se_up", rng.standard_normal((cse, c)) / math.sqrt(cse), False)
                self._add(pre + "dil_w", rng.standard_normal((c, c, 3, 3)) * math.sqrt(2.0 / (9 * c)), False)
                self._add(pre + "dil_b", np.zeros(c), False)
        for lvl in range(cfg.decoder_levels):
            pre = f"{b}.head.{lvl}."
            self._add(pre + "w", rng.standard_normal((k, chans[lvl], 1, 1)) / math.sqrt(chans[lvl]), False)
            self._add(pre + "b", np.zeros(k), False)

    def group(self, prefix):
        """Parameters under ``prefix`` keyed by the remaining suffix."""
        n = len(prefix)
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix)}

    def trainable(self):
        return [p for _, p in sorted(self.params.items()) if not p.frozen]

    def count(self, trainable=None):
        ps = self.params.values()
        if trainable is not None:
            ps = [p for p in ps if p.frozen != trainable]
        return int(sum(p.size for p in ps))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self):
        return {k: v.data.copy() for k, v in sorted(self.params.items())}

    def load_state(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"checkpoint/model parameter names differ: {sorted(missing)[:5]}")
        for k, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise DimensionError(f"{k}: checkpoint shape {arr.shape} != model {self.params[k].shape}")
            self.params[k].data = arr.copy()

    # -- forward ---------------------------------------------------------

    def prepare(self, images):
        """Images -> (alpha, beta) float arrays of shape (B, 3, H, W).

        Accepts a RawImage, a list of RawImages, or a (B, H, W, 3) / (H, W, 3)
        array (uint8, or float in [0, 1]).
        """
        if isinstance(images, RawImage):
            images = [images]
        if isinstance(images, (list, tuple)):
            arr = np.stack([im.normalized() if isinstance(im, RawImage) else np.asarray(im)
                            for im in images])
        else:
            arr = np.asarray(images)
            if arr.ndim == 3:
                arr = arr[None]
        if arr.dtype == np.uint8:
            arr = arr.astype(np.float64) / 255.0
        arr = np.asarray(arr, dtype=np.float64)
        s = self.config.image_size
        if arr.ndim != 4 or arr.shape[1:] != (s, s, 3):
            raise DimensionError(f"expected images of shape (B, {s}, {s}, 3), got {arr.shape}")
        beta = np.stack([gamma_correct(im, gray_stats(im), self.config.gamma_variant) for im in arr])
        return arr.transpose(0, 3, 1, 2).copy(), beta.transpose(0, 3, 1, 2).copy()

    def forward(self, images, base_only=False):
        return self.forward_prepared(*self.prepare(images), base_only=base_only)

    __call__ = forward

    def forward_prepared(self, alpha, beta, base_only=False):
        """Run both branches on prepared inputs.

        ``base_only`` drops every trainable addition in the encoders (low-rank
        deltas, adapters, prompt injection) so the frozen base activations can
        be compared against the full model.
        """
        cfg = self.config
        pr = self.params
        heads = cfg.heads
        branches = ["alpha", "beta"] if cfg.dual else ["alpha"]
        inputs = {"alpha": Tensor(alpha), "beta": Tensor(beta)}
        tokens = {b: patch_embed(inputs[b], pr[f"{b}.embed.w"], pr[f"{b}.embed.b"], cfg.patch_size)
                  + pr[f"{b}.pos"] for b in branches}
        use_mcp = cfg.use_mcp and not base_only
        if use_mcp:
            state = patch_embed(concat([inputs["alpha"], inputs["beta"]], axis=1),
                                pr["prompt.embed.w"], pr["prompt.embed.b"], cfg.patch_size) + pr["prompt.pos"]
            per_level = cfg.prompt_layers // cfg.decoder_levels
        outs = {b: BranchOutputs() for b in branches}
        enc = {b: [self.group(f"{b}.enc.{j}.") for j in range(cfg.encoder_layers)] for b in branches}
        lora = cfg.use_lora and not base_only
        adapter = cfg.use_adapter and not base_only

        level = 0
        for j in range(cfg.encoder_layers):
            for b in branches:
                tokens[b] = encoder_block(tokens[b], enc[b][j], heads, lora=lora, adapter=adapter)
            if j + 1 not in cfg.injection_indices:
                continue
            for b in branches:
                outs[b].encoder.append(tokens[b])
            if use_mcp:
                trans = [self.group(f"prompt.trans.{t}.")
                         for t in range(level * per_level, (level + 1) * per_level)]
                x_beta = tokens["beta"] if cfg.dual else tokens["alpha"]
                p_a, p_b, state = mcp_step(tokens["alpha"], x_beta, state,
                                           self.group(f"prompt.mcp.{level}."), trans, heads)
                for b, pb in zip(branches, (p_a, p_b)):
                    tokens[b] = inject_prompt(tokens[b], pb, pr[f"{b}.gate.{level}"])
            for b in branches:
                outs[b].features.append(tokens[b])
            level += 1

        for b in branches:
            outs[b].maps = self._decode(b, outs[b].features)
        return outs["alpha"], outs.get("beta")

    def _decode(self, b, feats):
        cfg = self.config
        spatial = [tokens_to_spatial(e, cfg.grid) for e in feats]
        n = cfg.decoder_levels
        g = spatial[-1]
        maps = [self._head(b, 0, g)]
        for k in range(1, n):
            e = spatial[n - 1 - k]
            for _ in range(k - 1):
                e = upsample2x(e)
            g = dfam(e, g, self.group(f"{b}.dfam.{k - 1}."), attention_block=cfg.use_dfam)
            maps.append(self._head(b, k, g))
        return maps

    def _head(self, b, lvl, g):
        p = self.params
        return sigmoid(conv2d(g, p[f"{b}.head.{lvl}.w"], p[f"{b}.head.{lvl}.b"]))

    # -- inference -------------------------------------------------------

    def predict_maps(self, alpha, beta, branch="alpha"):
        """Finest-level probability maps (B, K, s, s) as numpy, no tape."""
        out_a, out_b = self.forward_prepared(alpha, beta)
        out = out_b if branch == "beta" and out_b is not None else out_a
        return out.maps[-1].data

    def maps_to_masks(self, maps, xi=0.5):
        """Binary masks (B, image, image) from finest-level maps."""
        cfg = self.config
        masks = []
        for m in maps:
            prob = m.transpose(1, 2, 0)
            if prob.shape[0] != cfg.image_size:
                from .imaging import resize_bilinear
                prob = resize_bilinear(prob, cfg.image_size, cfg.image_size)
            if cfg.head == "c3p":
                masks.append(codec.decode(codec.threshold(prob, xi)))
            else:
                masks.append(codec.threshold(prob[:, :, 0], xi))
        return np.stack(masks)

    def predict(self, images, xi=0.5, batch_size=16):
        alpha, beta = self.prepare(images)
        out = []
        for s in range(0, len(alpha), batch_size):
            out.append(self.maps_to_masks(self.predict_maps(alpha[s:s + batch_size],
                                                            beta[s:s + batch_size]), xi))
        return np.concatenate(out)


# -------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"DSAMCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: Mapping[str, np.ndarray]) -> bytes:
    """Serialize name -> array, sorted by name. Integers and floats little-endian."""
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name in sorted(state):
        arr = np.asarray(state[name], dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def load_checkpoint(data: bytes) -> dict:
    if not data.startswith(CKPT_MAGIC):
        raise CheckpointError("bad checkpoint magic")
    pos = len(CKPT_MAGIC)
    try:
        version, count = struct.unpack_from("<II", data, pos)
        pos += 8
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 8
            if pos + size > len(data):
                raise CheckpointError(f"truncated data for {name!r}")
            state[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos) \
                .reshape(dims).astype(np.float64)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint records")
    return state
