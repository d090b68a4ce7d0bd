"""Synthetic thyroid ultrasound phantoms.

A dark gland ellipse sits on a mid-gray background and contains zero or
more bright or dark nodule ellipses. Multiplicative, spatially correlated
speckle is applied last, then intensities are min-max normalized to [0, 1]
exactly as the dataset loader normalizes images read from disk. The masks are the exact ellipse interiors evaluated
at pixel centers, so they are known analytically.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import GenerationError
from .sample import UltrasoundSample
from .transforms import minmax_normalize

_MAX_TRIES = 200


@dataclass
class PhantomConfig:
    height: int = 64
    width: int = 64
    gland_axes: tuple[float, float] = (0.30, 0.42)  # semi-axis range, fraction of canvas
    gland_jitter: float = 0.05  # center offset range, fraction of canvas
    nodule_count: tuple[int, int] = (1, 1)
    nodule_radius: tuple[float, float] = (0.12, 0.22)  # semi-axis range, fraction of canvas
    speckle_variance: float = 0.01
    speckle_correlation: float = 0.8  # gaussian sigma in pixels
    background: float = 0.5
    gland_level: float = 0.28
    nodule_bright: float = 0.75
    nodule_dark: float = 0.10
    seed: int = 42

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("phantom canvas must be positive")
        lo, hi = self.nodule_count
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid nodule_count range {self.nodule_count}")
        if self.speckle_variance < 0:
            raise ValueError("speckle_variance must be non-negative")
        self.gland_axes = tuple(self.gland_axes)
        self.nodule_count = tuple(self.nodule_count)
        self.nodule_radius = tuple(self.nodule_radius)

    def to_dict(self) -> dict:
        return asdict(self)


def ellipse_value(rows, cols, cy, cx, ay, ax, theta):
    """Normalized radius squared; < 1 strictly inside the ellipse."""
    dy, dx = rows - cy, cols - cx
    c, s = np.cos(theta), np.sin(theta)
    u = c * dy + s * dx
    v = -s * dy + c * dx
    return (u / ay) ** 2 + (v / ax) ** 2


def ellipse_mask(shape, cy, cx, ay, ax, theta) -> np.ndarray:
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return (ellipse_value(rows, cols, cy, cx, ay, ax, theta) < 1.0).astype(np.uint8)


def _boundary(cy, cx, ay, ax, theta, n=256):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    u, v = ay * np.cos(t), ax * np.sin(t)
    c, s = np.cos(theta), np.sin(theta)
    return cy + c * u - s * v, cx + s * u + c * v


def _inside(gland, nodule, margin=0.95) -> bool:
    ys, xs = _boundary(*nodule)
    return bool(np.all(ellipse_value(ys, xs, *gland) < margin))


def generate_phantom(config: PhantomConfig, rng: Optional[np.random.Generator] = None,
                     stem: str = "") -> UltrasoundSample:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    h, w = config.height, config.width
    cy = (h - 1) / 2.0 + rng.uniform(-1, 1) * config.gland_jitter * h
    cx = (w - 1) / 2.0 + rng.uniform(-1, 1) * config.gland_jitter * w
    gay = rng.uniform(*config.gland_axes) * h
    gax = rng.uniform(*config.gland_axes) * w
    gtheta = rng.uniform(-0.3, 0.3)
    gland = (cy, cx, gay, gax, gtheta)

    count = int(rng.integers(config.nodule_count[0], config.nodule_count[1] + 1))
    nodules = []
    for _ in range(count):
        for _attempt in range(_MAX_TRIES):
            ay = rng.uniform(*config.nodule_radius) * h
            ax = rng.uniform(*config.nodule_radius) * w
            theta = rng.uniform(0, np.pi)
            # candidate center uniformly inside the gland
            r = np.sqrt(rng.uniform()) * 0.8
            phi = rng.uniform(0, 2 * np.pi)
            u, v = r * gay * np.cos(phi), r * gax * np.sin(phi)
            ny = cy + np.cos(gtheta) * u - np.sin(gtheta) * v
            nx = cx + np.sin(gtheta) * u + np.cos(gtheta) * v
            candidate = (ny, nx, ay, ax, theta)
            if _inside(gland, candidate):
                bright = bool(rng.random() < 0.5)
                nodules.append((candidate, bright))
                break
        else:
            raise GenerationError(
                f"could not place a nodule inside the gland after {_MAX_TRIES} tries; "
                "shrink nodule_radius or enlarge gland_axes"
            )

    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    gland_mask = (ellipse_value(rows, cols, *gland) < 1.0).astype(np.uint8)
    nodule_mask = np.zeros((h, w), dtype=np.uint8)
    clean = np.full((h, w), config.background)
    clean[gland_mask == 1] = config.gland_level
    for geom, bright in nodules:
        inside = ellipse_value(rows, cols, *geom) < 1.0
        clean[inside] = config.nodule_bright if bright else config.nodule_dark
        nodule_mask[inside] = 1
    # nodules are placed by boundary sampling; the rasterized masks must nest too
    if np.any(nodule_mask > gland_mask):
        raise GenerationError("rasterized nodule escaped the gland")

    if config.speckle_variance > 0:
        noise = rng.standard_normal((h, w))
        if config.speckle_correlation > 0:
            noise = gaussian_filter(noise, config.speckle_correlation, mode="reflect")
            noise /= noise.std()
        image = clean * (1.0 + np.sqrt(config.speckle_variance) * noise)
    else:
        image = clean
    # same intensity normalization the dataset loader applies, so an in-memory
    # phantom matches its own written-then-reloaded copy up to 8-bit rounding
    image = minmax_normalize(np.clip(image, 0.0, 1.0))
    meta = {
        "gland": gland,
        "nodules": [{"ellipse": g, "bright": b} for g, b in nodules],
    }
    return UltrasoundSample(image=image, nodule_mask=nodule_mask, gland_mask=gland_mask, stem=stem, meta=meta)


def phantom_set(config: PhantomConfig, count: int, seed: int, prefix: str = "phantom") -> list[UltrasoundSample]:
    """``count`` phantoms, each from its own generator seeded by ``(seed, index)``."""
    return [
        generate_phantom(config, np.random.default_rng([seed, i]), stem=f"{prefix}_{i:04d}")
        for i in range(count)
    ]
