"""Ablation harness: train variants on the synthetic task and compare held-out IoU."""
from __future__ import annotations

from dataclasses import dataclass, replace

from .model import DualSAM, ModelConfig
from .synthetic import SynthConfig, gen_synthetic
from .training import Dataset, TrainConfig, evaluate_model, train

# name -> (model overrides, pms)
VARIANTS = {
    "pixel-single": ({"head": "pixel", "dual": False}, False),
    "pixel-dual": ({"head": "pixel"}, False),
    "pixel-dual-pms": ({"head": "pixel"}, True),
    "c3p-single": ({"dual": False}, False),
    "c3p-dual": ({}, False),
    "c3p-dual-pms": ({}, True),
    "no-mcp": ({"use_mcp": False}, True),
    "no-dfam": ({"use_dfam": False}, True),
    "no-lora": ({"use_lora": False}, True),
    "no-adapter": ({"use_adapter": False}, True),
}
TABLE_VARIANTS = ("pixel-single", "pixel-dual", "pixel-dual-pms",
                  "c3p-single", "c3p-dual", "c3p-dual-pms")


@dataclass(frozen=True)
class AblationBudget:
    n_train: int = 200
    n_test: int = 50
    epochs: int = 30


def run_variant(name, seed, budget=AblationBudget(), base: ModelConfig | None = None,
                train_cfg: TrainConfig | None = None, synth: SynthConfig | None = None):
    """Train one variant from scratch; model, data and shuffling all use ``seed``."""
    overrides, pms = VARIANTS[name]
    cfg = replace(base or ModelConfig(), seed=seed, **overrides)
    tc = replace(train_cfg or TrainConfig(), epochs=budget.epochs, pms=pms, seed=seed)
    train_set = gen_synthetic(seed, budget.n_train, synth)
    test_set = gen_synthetic(seed, budget.n_test, synth, start=budget.n_train)
    model = DualSAM(cfg)
    _, history = train(model, Dataset.from_samples(model, train_set), tc)
    report = evaluate_model(model, test_set)
    return {"variant": name, "seed": seed, "miou": report.miou, "f_beta": report.f_beta,
            "mae": report.mae, "final_loss": history[-1]["total"] if history else float("nan")}


def run_ablation(names=TABLE_VARIANTS, seeds=(0, 1, 2), budget=AblationBudget(), log=None, **kw):
    rows = []
    for seed in seeds:
        for name in names:
            row = run_variant(name, seed, budget, **kw)
            rows.append(row)
            if log:
                log(row)
    return rows


def summarize(rows):
    """Mean of each metric per variant, in first-seen order."""
    out = {}
    for r in rows:
        out.setdefault(r["variant"], []).append(r)
    return {name: {k: sum(r[k] for r in rs) / len(rs) for k in ("miou", "f_beta", "mae")}
            for name, rs in out.items()}


def format_table(rows):
    means = summarize(rows)
    lines = [f"{'variant':<16} {'miou':>8} {'f_beta':>8} {'mae':>8}"]
    for name, m in means.items():
        lines.append(f"{name:<16} {m['miou']:8.4f} {m['f_beta']:8.4f} {m['mae']:8.4f}")
    return "\n".join(lines)
