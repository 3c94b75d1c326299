"""Segmentation metrics: IoU, F-beta and MAE, plus dataset aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import resize_bilinear

IOU_MODES = ("fg-only", "two-class")


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def of(cls, pred, gt):
        p, g = _pair(pred, gt)
        tp = int(np.count_nonzero(p & g))
        fp = int(np.count_nonzero(p & ~g))
        fn = int(np.count_nonzero(~p & g))
        return cls(tp, fp, fn, p.size - tp - fp - fn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _pair(pred, gt):
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth {g.shape}")
    return p.astype(bool), g.astype(bool)


def _ratio(num, den):
    return 1.0 if den == 0 else num / den


def iou(pred, gt, class_mode="fg-only"):
    """Foreground IoU (1.0 when both masks are empty), or the mean of fg and bg IoU."""
    if class_mode not in IOU_MODES:
        raise ValueError(f"class_mode must be one of {IOU_MODES}")
    c = ConfusionCounts.of(pred, gt)
    fg = _ratio(c.tp, c.tp + c.fp + c.fn)
    if class_mode == "fg-only":
        return fg
    return 0.5 * (fg + _ratio(c.tn, c.tn + c.fp + c.fn))


def f_beta(pred, gt, beta_sq=0.3):
    """``(1 + b2) P R / (b2 P + R)`` on binary masks; 0 when that denominator vanishes."""
    c = ConfusionCounts.of(pred, gt)
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("F-beta is undefined for an empty ground truth")
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn)
    den = beta_sq * precision + recall
    return 0.0 if den == 0 else (1.0 + beta_sq) * precision * recall / den


def mae(pred, gt):
    p, g = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth {g.shape}")
    return float(np.abs(p - g).mean())


@dataclass
class MetricReport:
    miou: float
    f_beta: float
    mae: float
    per_image: list = field(default_factory=list)   # dicts: index, iou, f_beta, mae
    notes: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "iou", "f_beta", "mae"])
        for row in self.per_image:
            w.writerow([row["index"], _fmt(row["iou"]), _fmt(row["f_beta"]), _fmt(row["mae"])])
        w.writerow(["mean", _fmt(self.miou), _fmt(self.f_beta), _fmt(self.mae)])
        return buf.getvalue()

    def summary(self):
        lines = [f"images={len(self.per_image)}", f"miou={_fmt(self.miou)}",
                 f"f_beta={_fmt(self.f_beta)}", f"mae={_fmt(self.mae)}"]
        lines += [f"note={n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _fmt(x):
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def evaluate_dataset(preds, gts, class_mode="fg-only", beta_sq=0.3, threshold=0.5):
    """Per-image and mean metrics.

    Predictions may be binary masks or probability maps of any size; they
    are bilinearly resized to the ground-truth size, MAE is taken on the
    resized map and IoU/F-beta on its binarization at ``threshold``.
    Images with empty ground truth get NaN F-beta and are left out of the
    F-beta mean; both that and empty-vs-empty IoU are recorded in ``notes``.
    """
    preds, gts = list(preds), list(gts)
    if not preds:
        raise ValueError("cannot evaluate an empty dataset")
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    rows, notes = [], []
    for i, (p, g) in enumerate(zip(preds, gts)):
        g = np.asarray(g)
        p = np.asarray(p, dtype=np.float64)
        if p.shape != g.shape:
            p = resize_bilinear(p, g.shape[1], g.shape[0])
        binary = p > threshold
        try:
            fb = f_beta(binary, g, beta_sq)
        except UndefinedMetricError:
            fb = math.nan
            notes.append(f"image {i}: empty ground truth, f_beta undefined")
        if not binary.any() and not g.any():
            notes.append(f"image {i}: empty prediction and ground truth, iou set to 1.0")
        rows.append({"index": i, "iou": iou(binary, g, class_mode), "f_beta": fb, "mae": mae(p, g)})
    fbs = [r["f_beta"] for r in rows if not math.isnan(r["f_beta"])]
    return MetricReport(
        miou=float(np.mean([r["iou"] for r in rows])),
        f_beta=float(np.mean(fbs)) if fbs else math.nan,
        mae=float(np.mean([r["mae"] for r in rows])),
        per_image=rows,
        notes=notes,
    )
