"""Evaluation metrics.

Confusion-matrix mean IoU for segmentation quality, plus two diversity
indices (Shannon, inverse Simpson) over the pooled class-pixel histogram
of a selected sample set.
"""

from __future__ import annotations

import numpy as np

from .pool import IGNORE_INDEX, PixelMask


class ConfusionMatrix:
    """K x K pixel counts; counts[g][p] = pixels with ground truth g predicted p.

    Matrices over the same class count merge associatively, so per-image
    matrices may be accumulated in any order.
    """

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        else:
            counts = np.asarray(counts, dtype=np.int64)
            if counts.shape != (num_classes, num_classes):
                raise ValueError(f"counts must be {num_classes}x{num_classes}, got {counts.shape}")
            if (counts < 0).any():
                raise ValueError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, pred: PixelMask, gt: PixelMask) -> None:
        if pred.shape != gt.shape:
            raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        scored = gt.scored_pixels()
        p = pred.classes[scored]
        g = gt.classes[scored]
        if (p == IGNORE_INDEX).any():
            raise ValueError("prediction contains IGNORE at pixels scored by the ground truth")
        if (p >= self.num_classes).any() or (g >= self.num_classes).any():
            raise ValueError("mask classes exceed the confusion matrix class count")
        flat = g * self.num_classes + p
        self.counts += np.bincount(flat, minlength=self.num_classes**2).reshape(
            self.num_classes, self.num_classes
        )

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return self.merge(other)


def accumulate_confusion(pred: PixelMask, gt: PixelMask, num_classes: int) -> ConfusionMatrix:
    """Confusion matrix for one (prediction, ground truth) mask pair."""
    cm = ConfusionMatrix(num_classes)
    cm.add(pred, gt)
    return cm


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN for classes absent from both prediction and truth."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - np.diag(cm.counts)
    iou = np.full(cm.num_classes, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes present in prediction or ground truth."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty; nothing was scored")
    iou = per_class_iou(cm)
    return float(np.nanmean(iou))


def class_pixel_histogram(masks, num_classes: int) -> np.ndarray:
    """Pooled non-IGNORE pixel counts per class over an iterable of masks."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for mask in masks:
        flat = mask.classes[mask.scored_pixels()]
        counts += np.bincount(flat, minlength=num_classes)
    return counts


def shannon_index(counts) -> float:
    """Shannon diversity H = -sum p_i ln p_i over the class proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ValueError("histogram counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    p = counts / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return float(-terms.sum())


def simpson_inverse_index(counts) -> float:
    """Probability that two pixels drawn without replacement differ in class.

    D = 1 - sum_i n_i (n_i - 1) / (N (N - 1)) with N the total pixel count.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if (counts < 0).any():
        raise ValueError("histogram counts must be non-negative")
    total = int(counts.sum())
    if total < 2:
        raise ValueError(f"need at least 2 individuals, got {total}")
    same = (counts.astype(np.float64) * (counts - 1.0)).sum()
    return float(1.0 - same / (total * (total - 1.0)))


def evaluate_predictions(predict, dataset, ids, num_classes: int) -> ConfusionMatrix:
    """Score a predictor over a split: `predict(sample_id) -> PixelMask`.

    Every scored id must carry a ground-truth mask.
    """
    cm = ConfusionMatrix(num_classes)
    for sample_id in ids:
        gt = dataset.load_mask(sample_id)
        if gt is None:
            raise ValueError(f"sample {sample_id!r} has no ground-truth mask to score against")
        cm.add(predict(sample_id), gt)
    return cm


def diversity_report(manifest_ids, dataset) -> tuple[float, float]:
    """(Shannon, inverse Simpson) over all scored pixels of the manifest samples."""
    masks = []
    for sample_id in manifest_ids:
        mask = dataset.load_mask(sample_id)
        if mask is None:
            raise ValueError(f"manifest sample {sample_id!r} has no pixel mask")
        masks.append(mask)
    if not masks:
        raise ValueError("manifest is empty")
    counts = class_pixel_histogram(masks, dataset.num_classes)
    return shannon_index(counts), simpson_inverse_index(counts)
