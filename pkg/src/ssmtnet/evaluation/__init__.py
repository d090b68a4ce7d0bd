"""Overlap metrics, evaluation reports and inference outputs."""

from .infer import InferenceResult, infer, overlay_rgb
from .metrics import OverlapCounts, dsc, dsc_from_counts, iou, iou_from_counts, overlap_counts
from .predict import predict_masks, predict_probabilities
from .report import MetricReport, evaluate, score_masks

__all__ = [
    "InferenceResult", "infer", "overlay_rgb", "OverlapCounts", "dsc", "dsc_from_counts", "iou",
    "iou_from_counts", "overlap_counts", "predict_masks", "predict_probabilities", "MetricReport",
    "evaluate", "score_masks",
]
