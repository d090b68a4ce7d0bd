"""Batched gradient-free forward passes."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff import no_grad
from ..model import SSMTNet

THRESHOLD = 0.5


def predict_probabilities(model: SSMTNet, images: Sequence[np.ndarray], batch_size: int = 8,
                          branches: Sequence[str] = ("nodule", "gland"),
                          class_mode: str = "hard") -> dict[str, np.ndarray]:
    """Fused soft masks ``N×H×W`` per requested segmentation branch.

    Parameters are only read, never written, so this can run against a
    live model between optimizer steps.
    """
    out: dict[str, list[np.ndarray]] = {b: [] for b in branches}
    images = [np.asarray(im, dtype=np.float32) for im in images]
    with no_grad():
        for start in range(0, len(images), batch_size):
            batch = np.stack(images[start:start + batch_size])
            res = model(batch, branches=tuple(branches), class_mode=class_mode)
            for b in branches:
                out[b].append(getattr(res, b).mask.data[:, 0])
    return {b: np.concatenate(v) if v else np.zeros((0,), np.float32) for b, v in out.items()}


def predict_masks(model: SSMTNet, images: Sequence[np.ndarray], batch_size: int = 8,
                  branches: Sequence[str] = ("nodule", "gland")) -> dict[str, np.ndarray]:
    """Binary ``uint8`` masks, strictly above 0.5 on the fused probability."""
    probs = predict_probabilities(model, images, batch_size, branches)
    return {b: (p > THRESHOLD).astype(np.uint8) for b, p in probs.items()}
