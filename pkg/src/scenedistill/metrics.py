"""Segmentation metrics: confusion accumulation, mIoU/mAcc, harmonic-mean
IoU for seen/unseen splits, and frequency-based class grouping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) u64, rows = ground truth, cols = prediction

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ValueError("confusion matrices disagree on class count")
        return ConfusionMatrix(self.counts + other.counts)


def accumulate(pred: np.ndarray, gt: np.ndarray, n_classes: int) -> ConfusionMatrix:
    """Count (gt, pred) pairs; gt == -1 is ignored."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred/gt length mismatch: {pred.shape} vs {gt.shape}")
    if gt.size and (gt.min() < -1 or gt.max() >= n_classes):
        raise ValueError(f"gt labels outside [-1, {n_classes})")
    keep = gt >= 0
    p, g = pred[keep], gt[keep]
    if p.size and (p.min() < 0 or p.max() >= n_classes):
        raise ValueError(f"predictions outside [0, {n_classes})")
    flat = np.bincount(g * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(flat.reshape(n_classes, n_classes).astype(np.uint64))


def miou_macc(cm: ConfusionMatrix) -> tuple[np.ndarray, float, np.ndarray, float]:
    """Per-class IoU/Acc (NaN where undefined) and their means in percent.

    Classes absent from both gt and predictions are excluded from the IoU
    mean; classes without gt points are excluded from the Acc mean.
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    gt_tot = c.sum(axis=1)
    pred_tot = c.sum(axis=0)
    union = gt_tot + pred_tot - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
        acc = np.where(gt_tot > 0, tp / np.maximum(gt_tot, 1), np.nan)
    if not np.any(union > 0):
        raise ValueError("no evaluated points")
    miou = float(np.nanmean(iou) * 100.0)
    macc = float(np.nanmean(acc) * 100.0) if np.any(gt_tot > 0) else float("nan")
    return iou * 100.0, miou, acc * 100.0, macc


def group_miou(cm: ConfusionMatrix, class_ids) -> float:
    """Mean IoU in percent over a subset of classes (NaNs excluded)."""
    iou, _, _, _ = miou_macc(cm)
    vals = [iou[i] for i in class_ids if not np.isnan(iou[i])]
    return float(np.mean(vals)) if vals else float("nan")


def hiou(miou_seen: float, miou_unseen: float) -> float:
    """Harmonic mean of seen/unseen mIoU; 0 when both are 0."""
    if miou_seen < 0 or miou_unseen < 0:
        raise ValueError("mIoU inputs must be >= 0")
    s = miou_seen + miou_unseen
    if s == 0:
        return 0.0
    return 2.0 * miou_seen * miou_unseen / s


def split_head_common_tail(class_point_counts) -> tuple[list[int], list[int], list[int]]:
    """Split class ids into three near-equal groups by descending point
    count (ties by class id; remainders go to the earlier groups)."""
    counts = np.asarray(class_point_counts)
    k = len(counts)
    if k < 3:
        raise ValueError(f"need at least 3 classes, got {k}")
    order = sorted(range(k), key=lambda i: (-counts[i], i))
    base, rem = divmod(k, 3)
    sizes = [base + (1 if i < rem else 0) for i in range(3)]
    groups = []
    at = 0
    for size in sizes:
        groups.append(order[at:at + size])
        at += size
    return groups[0], groups[1], groups[2]


def format_report(names, cm: ConfusionMatrix, label_set=None) -> str:
    """Pretty per-class table plus group means, percentages to one decimal."""
    iou, miou, acc, macc = miou_macc(cm)
    width = max([len(n) for n in names] + [8])
    lines = [f"{'class':<{width}}  {'IoU':>6}  {'Acc':>6}"]
    for i, name in enumerate(names):
        si = "   -" if np.isnan(iou[i]) else f"{iou[i]:6.1f}"
        sa = "   -" if np.isnan(acc[i]) else f"{acc[i]:6.1f}"
        lines.append(f"{name:<{width}}  {si:>6}  {sa:>6}")
    lines.append(f"{'mean':<{width}}  {miou:6.1f}  {macc:6.1f}")
    if label_set is not None:
        for group, ids in (("head", label_set.head), ("common", label_set.common),
                           ("tail", label_set.tail)):
            if ids:
                lines.append(f"{ group + ' mIoU':<{width}}  {group_miou(cm, ids):6.1f}")
        if label_set.seen and label_set.unseen:
            s = group_miou(cm, label_set.seen)
            u = group_miou(cm, label_set.unseen)
            lines.append(f"{'seen mIoU':<{width}}  {s:6.1f}")
            lines.append(f"{'unseen mIoU':<{width}}  {u:6.1f}")
            lines.append(f"{'hIoU':<{width}}  {hiou(s, u):6.1f}")
    return "\n".join(lines)


def write_report_csv(path, names, cm: ConfusionMatrix) -> None:
    import csv

    iou, miou, acc, macc = miou_macc(cm)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "iou", "acc"])
        for i, name in enumerate(names):
            writer.writerow([name,
                             "" if np.isnan(iou[i]) else f"{iou[i]:.1f}",
                             "" if np.isnan(acc[i]) else f"{acc[i]:.1f}"])
        writer.writerow(["mean", f"{miou:.1f}", f"{macc:.1f}"])
