"""Evaluation metrics for segmentation and classification runs, and the CSV
emission they share."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SEG_CSV_COLUMNS = ("run_id", "epoch", "class", "dsc", "precision", "recall", "f1", "s2s_mm", "iou")
CLS_CSV_COLUMNS = ("class", "precision", "recall", "f1")


@dataclass
class ClassMetrics:
    dsc: float = math.nan
    precision: float = math.nan
    recall: float = math.nan
    f1: float = math.nan
    iou: float = math.nan
    s2s: float = math.nan


@dataclass
class MetricsRecord:
    """Per-class metrics plus macro averages for one evaluation pass."""

    per_class: dict[int, ClassMetrics] = field(default_factory=dict)
    accuracy: float = math.nan

    def macro(self, name: str) -> float:
        vals = [getattr(m, name) for m in self.per_class.values()]
        vals = [v for v in vals if not math.isnan(v)]
        return sum(vals) / len(vals) if vals else math.nan


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbor (image
    border counts as background)."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def _surface_distance(pred: np.ndarray, gt: np.ndarray, spacing: float) -> float:
    """Symmetric mean nearest-boundary distance in physical units.

    2-D pixel-boundary stand-in for a mesh surface distance; exact pairwise
    Euclidean distances between the two boundary point sets.
    """
    pb = np.argwhere(_boundary(pred))
    gb = np.argwhere(_boundary(gt))
    if len(pb) == 0 and len(gb) == 0:
        return 0.0
    if len(pb) == 0 or len(gb) == 0:
        return math.nan
    d2 = ((pb[:, None, :] - gb[None, :, :]) ** 2).sum(axis=2).astype(float)
    d = np.sqrt(d2)
    return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()) * spacing)


def seg_metrics(pred: np.ndarray, gt: np.ndarray, n_classes: int, spacing: float = 1.0) -> MetricsRecord:
    """Per-class DSC / precision / recall / F1 / IoU and boundary distance
    between two label masks.

    Empty-set conventions: a class absent from both masks scores DSC 1 (and
    IoU 1); absent from exactly one scores 0. Precision/recall/F1 use the
    0-for-empty-denominator convention.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"seg_metrics: shape mismatch {pred.shape} vs {gt.shape}")
    rec = MetricsRecord()
    rec.accuracy = float((pred == gt).mean())
    for c in range(n_classes):
        p = pred == c
        g = gt == c
        tp = float(np.count_nonzero(p & g))
        fp = float(np.count_nonzero(p & ~g))
        fn = float(np.count_nonzero(~p & g))
        m = ClassMetrics()
        if tp + fp + fn == 0:
            m.dsc = 1.0
            m.iou = 1.0
        else:
            m.dsc = 2.0 * tp / (2.0 * tp + fp + fn)
            m.iou = tp / (tp + fp + fn)
        m.precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        m.recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        m.f1 = (
            2.0 * m.precision * m.recall / (m.precision + m.recall)
            if m.precision + m.recall > 0
            else 0.0
        )
        m.s2s = _surface_distance(p, g, spacing)
        rec.per_class[c] = m
    return rec


def cls_metrics(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> MetricsRecord:
    """Per-class precision / recall / F1 from label vectors, macro averages
    unweighted, accuracy as the global fraction correct."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"cls_metrics: shape mismatch {pred.shape} vs {gt.shape}")
    rec = MetricsRecord()
    rec.accuracy = float((pred == gt).mean()) if len(gt) else math.nan
    for c in range(n_classes):
        tp = float(np.count_nonzero((pred == c) & (gt == c)))
        fp = float(np.count_nonzero((pred == c) & (gt != c)))
        fn = float(np.count_nonzero((pred != c) & (gt == c)))
        m = ClassMetrics()
        m.precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        m.recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        m.f1 = (
            2.0 * m.precision * m.recall / (m.precision + m.recall)
            if m.precision + m.recall > 0
            else 0.0
        )
        rec.per_class[c] = m
    return rec


def mean_records(records: list[MetricsRecord]) -> MetricsRecord:
    """Average per-class metrics over samples, skipping NaN entries."""
    out = MetricsRecord()
    if not records:
        return out
    accs = [r.accuracy for r in records if not math.isnan(r.accuracy)]
    out.accuracy = sum(accs) / len(accs) if accs else math.nan
    classes = sorted({c for r in records for c in r.per_class})
    for c in classes:
        m = ClassMetrics()
        for name in ("dsc", "precision", "recall", "f1", "iou", "s2s"):
            vals = [
                getattr(r.per_class[c], name)
                for r in records
                if c in r.per_class and not math.isnan(getattr(r.per_class[c], name))
            ]
            setattr(m, name, sum(vals) / len(vals) if vals else math.nan)
        out.per_class[c] = m
    return out


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def seg_csv_rows(run_id: str, epoch: int, rec: MetricsRecord) -> list[str]:
    rows = []
    for c in sorted(rec.per_class):
        m = rec.per_class[c]
        rows.append(
            ",".join(
                [run_id, str(epoch), str(c)]
                + [_fmt(v) for v in (m.dsc, m.precision, m.recall, m.f1, m.s2s, m.iou)]
            )
        )
    return rows


def write_seg_csv(path, run_id: str, history: list[tuple[int, MetricsRecord]]) -> None:
    lines = [",".join(SEG_CSV_COLUMNS)]
    for epoch, rec in history:
        lines.extend(seg_csv_rows(run_id, epoch, rec))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cls_csv(path, rec: MetricsRecord, class_names: dict[int, str] | None = None) -> None:
    lines = [",".join(CLS_CSV_COLUMNS)]
    for c in sorted(rec.per_class):
        m = rec.per_class[c]
        name = class_names.get(c, str(c)) if class_names else str(c)
        lines.append(",".join([name, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1)]))
    lines.append(f"accuracy,{_fmt(rec.accuracy)},,")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
