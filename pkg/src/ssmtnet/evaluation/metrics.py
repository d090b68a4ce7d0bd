"""Overlap metrics computed from integer pixel counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError


@dataclass(frozen=True)
class OverlapCounts:
    intersection: int
    pred: int
    gt: int

    @property
    def union(self) -> int:
        return self.pred + self.gt - self.intersection


def _binary(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary (0/1)")
    return arr.astype(bool)


def overlap_counts(pred_mask, gt_mask) -> OverlapCounts:
    p = _binary(pred_mask, "pred_mask")
    g = _binary(gt_mask, "gt_mask")
    if p.shape != g.shape:
        raise DimensionError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return OverlapCounts(int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), int(np.count_nonzero(g)))


def iou_from_counts(c: OverlapCounts) -> float:
    return 1.0 if c.union == 0 else c.intersection / c.union


def dsc_from_counts(c: OverlapCounts) -> float:
    total = c.pred + c.gt
    return 1.0 if total == 0 else 2 * c.intersection / total


def iou(pred_mask, gt_mask) -> float:
    """|A∩B| / |A∪B|; two empty masks score 1.0."""
    return iou_from_counts(overlap_counts(pred_mask, gt_mask))


def dsc(pred_mask, gt_mask) -> float:
    """2|A∩B| / (|A| + |B|); two empty masks score 1.0."""
    return dsc_from_counts(overlap_counts(pred_mask, gt_mask))
