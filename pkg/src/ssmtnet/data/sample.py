from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from ..errors import ContractError, DimensionError


def compute_size_label(nodule_mask: np.ndarray) -> float:
    """Foreground fraction of a binary mask (the normalized nodule size)."""
    mask = np.asarray(nodule_mask)
    if mask.size == 0:
        raise DimensionError("size label of an empty mask is undefined")
    if not np.all((mask == 0) | (mask == 1)):
        raise ContractError("nodule mask must contain only 0 and 1")
    return float(np.float32(np.count_nonzero(mask) / mask.size))


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(mask) > threshold).astype(np.uint8)


@dataclass
class UltrasoundSample:
    """One grayscale image with optional nodule/gland masks.

    ``image`` is ``H×W`` float32 in [0, 1]; masks are ``H×W`` uint8 in {0, 1}.
    ``size_label`` is kept equal to the nodule-mask foreground fraction.
    """

    image: np.ndarray
    nodule_mask: Optional[np.ndarray] = None
    gland_mask: Optional[np.ndarray] = None
    size_label: Optional[float] = None
    stem: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 2:
            raise DimensionError(f"image must be H×W, got {self.image.shape}")
        for attr in ("nodule_mask", "gland_mask"):
            m = getattr(self, attr)
            if m is None:
                continue
            m = np.asarray(m)
            if m.shape != self.image.shape:
                raise DimensionError(f"{attr} shape {m.shape} differs from image {self.image.shape}")
            if not np.all((m == 0) | (m == 1)):
                raise ContractError(f"{attr} must contain only 0 and 1")
            setattr(self, attr, m.astype(np.uint8))
        if self.nodule_mask is not None:
            self.size_label = compute_size_label(self.nodule_mask)
        if not np.all(np.isfinite(self.image)):
            raise ContractError(f"image {self.stem!r} contains non-finite values")

    @property
    def labeled(self) -> bool:
        return self.nodule_mask is not None

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    def with_geometry(self, image, nodule_mask, gland_mask) -> "UltrasoundSample":
        """Copy with replaced pixels; the size label is recomputed."""
        return replace(self, image=image, nodule_mask=nodule_mask, gland_mask=gland_mask,
                       size_label=None, meta=dict(self.meta))

    def unlabeled(self) -> "UltrasoundSample":
        return replace(self, nodule_mask=None, gland_mask=None, size_label=None, meta=dict(self.meta))
