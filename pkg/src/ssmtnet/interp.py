"""Separable resampling matrices.

A 2-D resize is ``Ry @ img @ Rx.T`` where ``Ry``/``Rx`` map input rows/cols to
output rows/cols. Bilinear uses the align-corners grid, so affine fields are
reproduced exactly (no edge clamping); nearest uses pixel-center mapping.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DimensionError

MODES = ("nearest", "bilinear")


@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """Return the (n_out, n_in) float64 matrix resampling one axis."""
    if n_in <= 0 or n_out <= 0:
        raise DimensionError(f"resample sizes must be positive, got {n_in} -> {n_out}")
    if mode not in MODES:
        raise ValueError(f"unknown resample mode {mode!r}")
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    if mode == "nearest":
        src = np.minimum(((rows + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)
        m[rows, src] = 1.0
    else:
        if n_out == 1:
            pos = np.array([(n_in - 1) / 2.0])
        else:
            pos = rows * (n_in - 1) / (n_out - 1)
        lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        np.add.at(m, (rows, lo), 1.0 - frac)
        np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def resize_array(img: np.ndarray, out_h: int, out_w: int, mode: str = "bilinear") -> np.ndarray:
    """Resize the last two axes of a numpy array (float64 math, float32 result)."""
    if img.ndim < 2 or img.shape[-1] == 0 or img.shape[-2] == 0:
        raise DimensionError(f"cannot resize array of shape {img.shape}")
    ry = interp_matrix(img.shape[-2], out_h, mode)
    rx = interp_matrix(img.shape[-1], out_w, mode)
    out = ry @ img.astype(np.float64) @ rx.T
    return out.astype(np.float32)
