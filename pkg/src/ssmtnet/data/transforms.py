"""Resizing, normalization and the four training augmentations.

Geometric transforms are expressed as 2×3 *inverse* affine matrices mapping
output pixel coordinates ``(row, col, 1)`` to source coordinates. Image and
masks of a sample are always warped with the same matrix; images use
bilinear sampling, masks nearest sampling, and everything outside the source
is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionError
from ..interp import resize_array
from .sample import UltrasoundSample, binarize


def minmax_normalize(image: np.ndarray) -> np.ndarray:
    """Affinely map ``image`` onto [0, 1] (float64 math, float32 result).

    A constant image maps to all zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    lo, hi = image.min(), image.max()
    if hi - lo <= 0:
        return np.zeros(image.shape, dtype=np.float32)
    return ((image - lo) / (hi - lo)).astype(np.float32)


def normalize_resize(image: np.ndarray, target_h: int, target_w: int, mask: bool = False) -> np.ndarray:
    """Resize to ``target_h×target_w`` then min-max normalize to [0, 1].

    Masks are resized nearest-neighbour and re-binarized instead of
    normalized. A constant image normalizes to all zeros.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise DimensionError(f"expected a non-empty H×W image, got shape {image.shape}")
    if target_h <= 0 or target_w <= 0:
        raise DimensionError(f"target size must be positive, got {target_h}×{target_w}")
    if mask:
        return binarize(resize_array(image.astype(np.float32), target_h, target_w, "nearest"))
    return minmax_normalize(resize_array(image.astype(np.float64), target_h, target_w, "bilinear"))


# ----------------------------------------------------------------------------
# affine warps
# ----------------------------------------------------------------------------

def rotation_matrix(degrees: float, shape: tuple[int, int]) -> np.ndarray:
    """Inverse map for a counter-clockwise rotation about the image center."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(degrees)
    c, s = round(math.cos(t), 12), round(math.sin(t), 12)
    # output (r, c) -> source: rotate back by -t around the center
    a = np.array([[c, s], [-s, c]])
    offset = np.array([cy, cx]) - a @ np.array([cy, cx])
    return np.hstack([a, offset[:, None]])


def zoom_matrix(scale: float, offset: tuple[float, float]) -> np.ndarray:
    """Inverse map shrinking content by ``scale`` and placing it at ``offset``."""
    oy, ox = offset
    return np.array([[1.0 / scale, 0.0, -oy / scale], [0.0, 1.0 / scale, -ox / scale]])


def source_coords(matrix: np.ndarray, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sy = matrix[0, 0] * rr + matrix[0, 1] * cc + matrix[0, 2]
    sx = matrix[1, 0] * rr + matrix[1, 1] * cc + matrix[1, 2]
    return sy, sx


def warp(image: np.ndarray, matrix: np.ndarray, mode: str = "bilinear") -> np.ndarray:
    """Sample ``image`` at ``matrix @ (row, col, 1)`` for every output pixel."""
    h, w = image.shape
    sy, sx = source_coords(matrix, (h, w))
    src = image.astype(np.float64)
    if mode == "nearest":
        iy = np.rint(sy).astype(np.int64)
        ix = np.rint(sx).astype(np.int64)
        ok = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        out = np.zeros((h, w))
        out[ok] = src[iy[ok], ix[ok]]
        return out.astype(image.dtype)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0
    out = np.zeros((h, w))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.zeros((h, w))
            vals[ok] = src[yy[ok], xx[ok]]
            out += wy * wx * vals
    return out.astype(np.float32)


def warp_sample(sample: UltrasoundSample, matrix: np.ndarray) -> UltrasoundSample:
    def m(mask):
        return None if mask is None else binarize(warp(mask.astype(np.float32), matrix, "nearest"))

    return sample.with_geometry(warp(sample.image, matrix, "bilinear"),
                                m(sample.nodule_mask), m(sample.gland_mask))


def hflip(sample: UltrasoundSample) -> UltrasoundSample:
    def f(a):
        return None if a is None else np.ascontiguousarray(a[:, ::-1])

    return sample.with_geometry(f(sample.image), f(sample.nodule_mask), f(sample.gland_mask))


def rotate(sample: UltrasoundSample, degrees: float) -> UltrasoundSample:
    return warp_sample(sample, rotation_matrix(degrees, sample.shape))


def zoom_out(sample: UltrasoundSample, scale: float, offset: Optional[tuple[float, float]] = None) -> UltrasoundSample:
    """Shrink by ``scale`` (≤ 1) into a zero canvas; centered unless ``offset`` is given."""
    h, w = sample.shape
    scale = min(max(scale, 1e-3), 1.0)
    if offset is None:
        offset = ((1 - scale) * (h - 1) / 2.0, (1 - scale) * (w - 1) / 2.0)
    return warp_sample(sample, zoom_matrix(scale, offset))


def stitch(samples: Sequence[UltrasoundSample]) -> UltrasoundSample:
    """2×2 mosaic of four samples, resized back to the first sample's size."""
    if len(samples) != 4:
        raise ValueError("stitching needs exactly four samples")
    h, w = samples[0].shape
    for s in samples:
        if s.shape != (h, w):
            raise DimensionError("stitched samples must share one size")

    def grid(arrays):
        return np.block([[arrays[0], arrays[1]], [arrays[2], arrays[3]]])

    image = resize_array(grid([s.image for s in samples]), h, w, "bilinear")
    masks = []
    for attr in ("nodule_mask", "gland_mask"):
        parts = [getattr(s, attr) for s in samples]
        if any(p is None for p in parts):
            masks.append(None)
        else:
            big = grid([p.astype(np.float32) for p in parts])
            masks.append(binarize(resize_array(big, h, w, "nearest")))
    return samples[0].with_geometry(np.clip(image, 0.0, 1.0), masks[0], masks[1])


# ----------------------------------------------------------------------------
# randomized augmentation
# ----------------------------------------------------------------------------

@dataclass
class AugmentationConfig:
    flip: bool = True
    flip_p: float = 0.5
    rotation: bool = True
    rotation_p: float = 0.5
    rotation_degrees: float = 15.0
    zoom_out: bool = True
    zoom_out_p: float = 0.3
    zoom_out_range: tuple[float, float] = (0.7, 1.0)
    stitching: bool = False
    stitching_p: float = 0.1
    seed: int = 42

    def __post_init__(self):
        for name in ("flip_p", "rotation_p", "zoom_out_p", "stitching_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        lo, hi = self.zoom_out_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"zoom_out_range must satisfy 0 < lo <= hi <= 1, got {self.zoom_out_range}")
        self.zoom_out_range = (float(lo), float(hi))

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(flip=False, rotation=False, zoom_out=False, stitching=False)


def augment(sample: UltrasoundSample, config: AugmentationConfig, rng: np.random.Generator,
            pool: Optional[Sequence[UltrasoundSample]] = None) -> UltrasoundSample:
    """Randomly stitch, flip, rotate and zoom out one sample.

    Every decision draws from ``rng`` in a fixed order, so the result is a
    pure function of the sample and the generator state. Stitching needs a
    ``pool`` of same-sized samples to draw the other three tiles from.
    """
    out = sample
    if config.stitching and pool and rng.random() < config.stitching_p:
        picks = rng.choice(len(pool), size=3, replace=len(pool) < 3)
        out = stitch([out] + [pool[int(i)] for i in picks])
    if config.flip and rng.random() < config.flip_p:
        out = hflip(out)
    if config.rotation and rng.random() < config.rotation_p:
        out = rotate(out, rng.uniform(-config.rotation_degrees, config.rotation_degrees))
    if config.zoom_out and rng.random() < config.zoom_out_p:
        scale = rng.uniform(*config.zoom_out_range)
        h, w = out.shape
        offset = (rng.uniform(0, (1 - scale) * (h - 1)), rng.uniform(0, (1 - scale) * (w - 1)))
        out = zoom_out(out, scale, offset)
    return out
