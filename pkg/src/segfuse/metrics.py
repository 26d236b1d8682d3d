"""Confusion-matrix metrics and a boundary F-score.

The boundary F-score compares predicted and true boundary pixel sets
under a Chebyshev distance tolerance, which is what the auxiliary
boundary term of the training loss is meant to improve.
"""

from __future__ import annotations

import numpy as np

from .labels import DEFAULT_IGNORE, LabelMap, boundary_mask


class ConfusionMatrix:
    """MxM counts indexed [true class][predicted class]; ignore excluded."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _as_labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelMap) else np.asarray(x)


def accumulate(cm: ConfusionMatrix, pred, gt, ignore_index: int = DEFAULT_IGNORE) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair into the matrix."""
    pred = _as_labels(pred)
    gt = _as_labels(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = gt != ignore_index
    m = cm.num_classes
    if np.any(valid & ((gt < 0) | (gt >= m))):
        raise ValueError(f"ground-truth label outside [0, {m})")
    if np.any(valid & ((pred < 0) | (pred >= m))):
        raise ValueError(f"predicted label outside [0, {m})")
    flat = gt[valid] * m + pred[valid]
    cm.counts += np.bincount(flat, minlength=m * m).reshape(m, m)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[list[float | None], float]:
    """Per-class IoU and their mean; classes with zero union are excluded
    from the mean and reported as None."""
    diag = np.diag(cm.counts).astype(np.float64)
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    union = rows + cols - diag
    per_class: list[float | None] = []
    present = []
    for c in range(cm.num_classes):
        if union[c] == 0:
            per_class.append(None)
        else:
            iou = diag[c] / union[c]
            per_class.append(float(iou))
            present.append(iou)
    if not present:
        raise ValueError("all class unions are zero; nothing to evaluate")
    return per_class, float(np.mean(present))


def _dilate_chebyshev(mask: np.ndarray, d: int) -> np.ndarray:
    """All pixels within Chebyshev distance d of a set pixel."""
    if d == 0:
        return mask.copy()
    h, w = mask.shape
    out = np.zeros_like(mask)
    for di in range(-d, d + 1):
        src_r = slice(max(0, di), h + min(0, di))
        dst_r = slice(max(0, -di), h + min(0, -di))
        for dj in range(-d, d + 1):
            src_c = slice(max(0, dj), w + min(0, dj))
            dst_c = slice(max(0, -dj), w + min(0, -dj))
            out[dst_r, dst_c] |= mask[src_r, src_c]
    return out


def boundary_match_counts(pred, gt, tolerance: int,
                          ignore_index: int = DEFAULT_IGNORE) -> tuple[int, int, int, int]:
    """(pred boundary size, matched pred, gt boundary size, matched gt)
    under the Chebyshev tolerance; mergeable across samples."""
    pred = _as_labels(pred)
    gt = _as_labels(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    valid = gt != ignore_index
    pred_masked = np.where(valid, pred, ignore_index)
    pred_b = boundary_mask(pred_masked, ignore_index)
    gt_b = boundary_mask(gt, ignore_index)
    pred_hit = int((pred_b & _dilate_chebyshev(gt_b, tolerance)).sum())
    gt_hit = int((gt_b & _dilate_chebyshev(pred_b, tolerance)).sum())
    return int(pred_b.sum()), pred_hit, int(gt_b.sum()), gt_hit


def fscore_from_counts(pred_total: int, pred_hit: int,
                       gt_total: int, gt_hit: int) -> tuple[float, float, float]:
    """(precision, recall, F1); both boundary sets empty scores 1.0,
    exactly one empty scores 0.0."""
    if pred_total == 0 and gt_total == 0:
        return 1.0, 1.0, 1.0
    if pred_total == 0 or gt_total == 0:
        return 0.0, 0.0, 0.0
    precision = pred_hit / pred_total
    recall = gt_hit / gt_total
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def boundary_fscore(pred, gt, tolerance: int,
                    ignore_index: int = DEFAULT_IGNORE) -> tuple[float, float, float]:
    """Boundary precision/recall/F1 for one prediction."""
    return fscore_from_counts(*boundary_match_counts(pred, gt, tolerance, ignore_index))


def format_report(report: dict) -> str:
    """Flat key=value lines, one metric per line."""
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            lines.append(f"{key}={value:.6f}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
