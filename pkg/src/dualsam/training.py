"""Training objective, optimizer and loop.

Per level, each branch is supervised by the connectivity label of the
OR-pooled ground truth. With mutual supervision on, each branch's
thresholded map is also a constant target for the other branch, weighted
by an epoch schedule that rises from ~0 to 0.1.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import codec
from .autodiff import Tape, Tensor, backward, bce_sum
from .metrics import evaluate_dataset
from .model import DualSAM, ModelConfig, load_checkpoint, save_checkpoint


@dataclass(frozen=True)
class Schedule:
    total_epochs: int = 50
    base: float = 0.1
    decay: float = 5.0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be at least 1")

    def __call__(self, t):
        return mu(t, self)


def mu(t, schedule: Schedule = Schedule()):
    """Mutual-supervision weight ``base * exp(-decay * (1 - t/T)^2)``."""
    T = schedule.total_epochs
    if not 0 <= t <= T:
        raise ValueError(f"epoch {t} outside [0, {T}]")
    return schedule.base * math.exp(-schedule.decay * (1.0 - t / T) ** 2)


def connectivity_bce(pred, target):
    """Summed BCE of a probability map against a binary label of the same shape."""
    return bce_sum(pred, np.asarray(target, dtype=np.float64))


def mutual_bce(pseudo, pred_other):
    """BCE of the other branch's map against a pseudo-label (a constant, never differentiated)."""
    if isinstance(pseudo, Tensor):
        pseudo = pseudo.data
    return bce_sum(pred_other, np.asarray(pseudo, dtype=np.float64))


def level_targets(masks, config: ModelConfig):
    """Per-level targets (coarse to fine) shaped like the head outputs (B, K, s, s)."""
    masks = np.asarray(masks)
    if masks.ndim == 2:
        masks = masks[None]
    out = []
    for lvl in range(1, config.decoder_levels + 1):
        factor = masks.shape[-1] // config.level_size(lvl)
        small = [codec.downsample_mask(m, factor) for m in masks]
        if config.head == "c3p":
            out.append(np.stack([codec.encode(m).transpose(2, 0, 1) for m in small]).astype(np.float64))
        else:
            out.append(np.stack(small)[:, None].astype(np.float64))
    return out


@dataclass
class LossReport:
    sup_alpha: list
    sup_beta: list
    mut_alpha: list
    mut_beta: list
    mu: float
    total: float

    def recompute(self):
        return (sum(self.sup_alpha) + sum(self.sup_beta)
                + self.mu * (sum(self.mut_alpha) + sum(self.mut_beta)))


def total_loss(out_alpha, out_beta, targets, mu_value, xi=0.5, pms=True):
    """Sum over levels of supervised losses plus ``mu`` times the mutual losses.

    ``targets`` are the per-level labels (see :func:`level_targets`);
    ``out_beta`` may be None for single-branch models. ``mut_alpha`` is the
    loss whose target is the alpha pseudo-label (so it trains beta).
    """
    branches = [out_alpha] if out_beta is None else [out_alpha, out_beta]
    if any(len(b.maps) != len(targets) for b in branches):
        raise ValueError("number of output levels differs from number of targets")
    terms = {"sup_alpha": [], "sup_beta": [], "mut_alpha": [], "mut_beta": []}
    loss = None

    def acc(name, value):
        nonlocal loss
        if not math.isfinite(value.item()):
            raise FloatingPointError(f"non-finite loss term {name}: {value.item()}")
        loss = value if loss is None else loss + value

    for lvl, y in enumerate(targets):
        la = connectivity_bce(out_alpha.maps[lvl], y)
        terms["sup_alpha"].append(la.item())
        acc(f"sup_alpha[level {lvl + 1}]", la)
        if out_beta is None:
            continue
        lb = connectivity_bce(out_beta.maps[lvl], y)
        terms["sup_beta"].append(lb.item())
        acc(f"sup_beta[level {lvl + 1}]", lb)
        if not pms:
            continue
        pa = out_alpha.maps[lvl].data
        pb = out_beta.maps[lvl].data
        ma = mutual_bce(codec.threshold(pa, xi), out_beta.maps[lvl])
        mb = mutual_bce(codec.threshold(pb, xi), out_alpha.maps[lvl])
        terms["mut_alpha"].append(ma.item())
        terms["mut_beta"].append(mb.item())
        if mu_value:
            acc(f"mut_alpha[level {lvl + 1}]", ma * mu_value)
            acc(f"mut_beta[level {lvl + 1}]", mb * mu_value)
    report = LossReport(mu=float(mu_value), total=loss.item(), **terms)
    return loss, report


# -------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state: OptimizerState):
    """One decoupled-weight-decay Adam update, in place.

    ``params`` is an iterable of Parameters, ``grads`` maps parameter name to
    gradient. Frozen parameters are skipped; a missing gradient for a
    trainable one is an error.
    """
    params = [p for p in params if not p.frozen]
    for p in params:
        if grads.get(p.name) is None:
            raise KeyError(f"missing gradient for trainable parameter {p.name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        g = np.asarray(grads[p.name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name} {p.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        data = p.data * (1.0 - state.lr * state.weight_decay)
        p.data = data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ------------------------------------------------------------------ loop

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.1
    lr_decay_every: int = 20
    lr_decay: float = 0.1
    xi: float = 0.5
    pms: bool = True
    schedule_epochs: int = 0   # T of the schedule; 0 means "same as epochs"
    seed: int = 0              # shuffling

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")

    def schedule(self):
        return Schedule(self.schedule_epochs or max(self.epochs, 1))

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch``."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


HISTORY_FIELDS = ["epoch", "mu", "lr", "total", "sup_alpha", "sup_beta",
                  "mut_alpha", "mut_beta", "total_per_pixel"]


@dataclass
class Dataset:
    alpha: np.ndarray      # (n, 3, H, W)
    beta: np.ndarray
    targets: list          # per level (n, K, s, s)
    masks: np.ndarray      # (n, H, W)

    def __len__(self):
        return len(self.masks)

    @classmethod
    def from_samples(cls, model: DualSAM, samples):
        alpha, beta = model.prepare([s.image for s in samples])
        masks = np.stack([s.mask for s in samples])
        return cls(alpha, beta, level_targets(masks, model.config), masks)


def train(model: DualSAM, samples, cfg: TrainConfig = TrainConfig(), log=None):
    """Optimize ``model`` in place; returns (final checkpoint bytes, history rows)."""
    data = samples if isinstance(samples, Dataset) else Dataset.from_samples(model, samples)
    schedule = cfg.schedule()
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    trainable = model.trainable()
    pixels = sum(t[0].size for t in data.targets)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        t = min(epoch + 1, schedule.total_epochs)
        mu_value = mu(t, schedule)
        order = rng.permutation(len(data))
        sums = dict.fromkeys(HISTORY_FIELDS[3:8], 0.0)
        for start in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            model.zero_grad()
            with Tape() as tape:
                out_a, out_b = model.forward_prepared(data.alpha[idx], data.beta[idx])
                loss, rep = total_loss(out_a, out_b, [t_[idx] for t_ in data.targets],
                                       mu_value, cfg.xi, cfg.pms and model.config.dual)
            backward(tape, loss)
            adamw_step(trainable, {p.name: p.grad if p.grad is not None else np.zeros(p.shape)
                                   for p in trainable}, opt)
            sums["total"] += rep.total
            for k in ("sup_alpha", "sup_beta", "mut_alpha", "mut_beta"):
                sums[k] += sum(getattr(rep, k))
        n = len(data)
        row = {"epoch": epoch + 1, "mu": mu_value, "lr": opt.lr}
        row.update({k: v / n for k, v in sums.items()})
        row["total_per_pixel"] = row["total"] / pixels
        history.append(row)
        if log:
            log(row)
    return save_checkpoint(model.state()), history


def history_csv(history):
    buf = io.StringIO()
    w = csv.DictWriter(buf, HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: repr(float(v)) if k != "epoch" else int(v) for k, v in row.items()})
    return buf.getvalue()


def write_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig, extra=None):
    items = {f"model.{k}": v for k, v in model_cfg.to_dict().items()}
    items.update({f"train.{k}": v for k, v in asdict(train_cfg).items()})
    items.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            fh.write(f"{k}={v}\n")


def read_config(path):
    """Parse a run's config.txt back into (ModelConfig, TrainConfig, extras)."""
    model, train_, extra = {}, {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            if key.startswith("model."):
                model[key[6:]] = val
            elif key.startswith("train."):
                train_[key[6:]] = val
            else:
                extra[key] = val
    kinds = {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)}
    tc = {}
    for k, v in train_.items():
        if k in kinds:
            tc[k] = v.lower() in ("1", "true", "yes") if kinds[k] is bool else kinds[k](v)
    return ModelConfig.from_dict(model), TrainConfig(**tc), extra


def run_training(out_dir, model_cfg: ModelConfig, train_cfg: TrainConfig, samples, extra=None, log=None):
    """Train a fresh model and write config.txt, history.csv, init.ckpt and final.ckpt."""
    os.makedirs(out_dir, exist_ok=True)
    model = DualSAM(model_cfg)
    write_config(os.path.join(out_dir, "config.txt"), model_cfg, train_cfg, extra)
    init = save_checkpoint(model.state())
    with open(os.path.join(out_dir, "init.ckpt"), "wb") as fh:
        fh.write(init)
    final, history = train(model, samples, train_cfg, log=log)
    with open(os.path.join(out_dir, "final.ckpt"), "wb") as fh:
        fh.write(final)
    with open(os.path.join(out_dir, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(history_csv(history))
    return model, history


def load_model(checkpoint: bytes, config: ModelConfig) -> DualSAM:
    model = DualSAM(config)
    model.load_state(load_checkpoint(checkpoint))
    return model


def evaluate_model(model: DualSAM, samples, class_mode="fg-only", xi=0.5):
    """Held-out metrics of the alpha-branch decoded masks."""
    masks = model.predict([s.image for s in samples], xi=xi)
    return evaluate_dataset(masks, [s.mask for s in samples], class_mode=class_mode)
