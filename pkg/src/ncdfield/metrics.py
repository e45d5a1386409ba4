"""Scoring unsupervised label maps against ground-truth classes.

Predicted cluster ids are first matched one-to-one to classes so that the
partition is scored independently of how its ids are numbered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class Confusion:
    counts: np.ndarray  # (P, C) pixels of predicted cluster p with class c
    pred_ids: list[int]
    class_ids: list[int]
    gt_totals: np.ndarray = field(default=None)  # (C,) valid pixels per class, incl. unpredicted

    def __post_init__(self):
        if self.gt_totals is None:
            self.gt_totals = self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.gt_totals.sum())


def _stack(maps) -> np.ndarray:
    if isinstance(maps, np.ndarray):
        return maps.ravel()
    return np.concatenate([np.asarray(m).ravel() for m in maps])


def confusion(pred, gt, valid=None, class_ids: list[int] | None = None) -> Confusion:
    """Pixel counts over valid pixels. Prediction 0 means unlabelled and gets no row."""
    pred, gt = _stack(pred), _stack(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in size")
    v = np.ones(pred.shape, dtype=bool) if valid is None else _stack(valid).astype(bool)
    pred, gt = pred[v], gt[v]
    classes = sorted(int(c) for c in np.unique(gt)) if class_ids is None else sorted(class_ids)
    preds = sorted(int(p) for p in np.unique(pred) if p != 0)
    in_gt = np.isin(gt, classes)
    g = np.searchsorted(classes, gt[in_gt])
    totals = np.bincount(g, minlength=len(classes)).astype(np.int64)
    m = pred[in_gt] != 0
    p = np.searchsorted(preds, pred[in_gt][m])
    flat = np.bincount(p * len(classes) + g[m], minlength=len(preds) * len(classes))
    counts = flat.reshape(len(preds), len(classes)).astype(np.int64)
    return Confusion(counts, preds, classes, totals)


def match_clusters(conf: Confusion) -> dict[int, int | None]:
    """One-to-one cluster -> class assignment maximizing matched pixels.

    Solved exactly with the Hungarian method; clusters left over map to None.
    """
    out: dict[int, int | None] = {p: None for p in conf.pred_ids}
    if conf.counts.size == 0:
        return out
    rows, cols = linear_sum_assignment(conf.counts, maximize=True)
    for r, c in zip(rows, cols):
        if conf.counts[r, c] > 0:
            out[conf.pred_ids[r]] = conf.class_ids[c]
    return out


def _relabel(pred: np.ndarray, matching: dict) -> np.ndarray:
    out = np.full(pred.shape, -1, dtype=np.int64)
    for p, c in matching.items():
        if c is not None:
            out[pred == p] = c
    return out


def miou(pred, gt, matching: dict, valid=None, class_ids: list[int] | None = None):
    """Per-class IoU of matched predictions and its mean over classes present in gt."""
    pred, gt = _stack(pred), _stack(gt)
    v = np.ones(pred.shape, dtype=bool) if valid is None else _stack(valid).astype(bool)
    mapped = _relabel(pred[v], matching)
    gt = gt[v]
    classes = sorted(int(c) for c in np.unique(gt)) if class_ids is None else sorted(class_ids)
    per = {}
    for c in classes:
        g = gt == c
        if not g.any():
            continue
        p = mapped == c
        per[c] = float((g & p).sum() / (g | p).sum())
    mean = float(np.mean(list(per.values()))) if per else float("nan")
    return per, mean


def pixel_accuracy(pred, gt, matching: dict, valid=None, class_ids: list[int] | None = None):
    """(total accuracy, mean per-class recall)."""
    pred, gt = _stack(pred), _stack(gt)
    v = np.ones(pred.shape, dtype=bool) if valid is None else _stack(valid).astype(bool)
    mapped = _relabel(pred[v], matching)
    gt = gt[v]
    if class_ids is not None:
        keep = np.isin(gt, class_ids)
        mapped, gt = mapped[keep], gt[keep]
    if gt.size == 0:
        return float("nan"), float("nan")
    hit = mapped == gt
    recalls = [float(hit[gt == c].mean()) for c in np.unique(gt)]
    return float(hit.mean()), float(np.mean(recalls))


@dataclass
class MetricsReport:
    per_class_iou: dict[int, float]
    miou: float
    known_miou: float
    novel_miou: float
    total_acc: float
    avg_acc: float
    matching: dict[int, int | None]
    class_names: dict[int, str] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float]]:
        out = []
        for c, v in sorted(self.per_class_iou.items()):
            name = self.class_names.get(c, str(c))
            out.append((f"iou[{name}]", v))
        out += [("known_miou", self.known_miou), ("novel_miou", self.novel_miou), ("miou", self.miou),
                ("total_acc", self.total_acc), ("avg_acc", self.avg_acc)]
        return out


def evaluate(pred, gt, valid, known: list[int], novel: list[int],
             class_names: dict[int, str] | None = None) -> MetricsReport:
    classes = sorted(set(known) | set(novel))
    conf = confusion(pred, gt, valid, classes)
    match = match_clusters(conf)
    per, mean = miou(pred, gt, match, valid, classes)
    total, avg = pixel_accuracy(pred, gt, match, valid, classes)

    def sub(ids):
        vals = [per[c] for c in ids if c in per]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(per, mean, sub(known), sub(novel), total, avg, match, dict(class_names or {}))


def write_metrics_csv(path, report: MetricsReport) -> None:
    lines = ["metric,value"] + [f"{k},{v:.6f}" for k, v in report.rows()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> dict[str, float]:
    rows = Path(path).read_text().splitlines()[1:]
    return {k: float(v) for k, v in (r.split(",") for r in rows)}
