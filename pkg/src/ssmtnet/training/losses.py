"""Task losses and the weighted multi-task objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, DimensionError

DICE_SMOOTH = 1e-6
CHARBONNIER_EPS = 1e-6


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def dice_loss(pred, target, smooth: float = DICE_SMOOTH) -> Tensor:
    """1 - (2 Σ p·t + s) / (Σ p + Σ t + s), pooled over every element.

    Parameters
    ----------
    pred : Tensor
        Soft prediction in [0, 1].
    target : array-like or Tensor
        Binary mask of the same shape (treated as a constant).
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float32))
    _same_shape(pred, target, "dice_loss")
    inter = ops.sum(ops.mul(pred, target))
    denom = ops.add(ops.add(ops.sum(pred), ops.sum(target)), smooth)
    return ops.sub(1.0, ops.div(ops.add(ops.mul(inter, 2.0), smooth), denom))


def charbonnier(rec: Tensor, target, eps: float = CHARBONNIER_EPS) -> Tensor:
    """mean( sqrt((rec - target)² + eps²) )."""
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=np.float32))
    _same_shape(rec, target, "charbonnier")
    diff = ops.sub(rec, target)
    return ops.mean(ops.sqrt(ops.add(ops.square(diff), eps * eps)))


def size_loss(pred: Tensor, true, present: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error between predicted and true size fractions.

    ``present`` marks which batch entries carry a size label; absent ones
    are excluded from the mean. With nothing present the loss is zero.
    """
    true = np.asarray(true, dtype=np.float32).reshape(pred.shape)
    mask = np.ones(pred.shape, dtype=np.float32) if present is None else \
        np.asarray(present, dtype=np.float32).reshape(pred.shape)
    count = float(mask.sum())
    sq = ops.mul(ops.square(ops.sub(pred, Tensor(true))), Tensor(mask))
    if count == 0:
        return ops.mul(ops.sum(sq), 0.0)
    return ops.div(ops.sum(sq), count)


@dataclass(frozen=True)
class LossWeights:
    """(alpha, beta, gamma, eta) for nodule, gland, size and reconstruction.

    The weights must be non-negative, sum to one and the nodule weight must
    dominate the other three combined.
    """

    alpha: float = 0.8
    beta: float = 0.1
    gamma: float = 0.05
    eta: float = 0.05

    def __post_init__(self):
        self.validate()

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.eta)

    def validate(self) -> None:
        vals = self.as_tuple()
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError(f"loss weights must be finite, got {vals}")
        if min(vals) < 0:
            raise ConfigError(f"loss weights must be >= 0, got {vals}")
        if abs(sum(vals) - 1.0) > 1e-6:
            raise ConfigError(f"loss weights must sum to 1, got {sum(vals):.6g}")
        rest = self.beta + self.gamma + self.eta
        if not self.alpha > rest:
            raise ConfigError(
                f"nodule weight alpha={self.alpha:g} must exceed beta+gamma+eta={rest:g}"
            )

    def renormalized(self, gland: bool = True, size: bool = True, rec: bool = True) -> "LossWeights":
        """Zero the disabled branches and rescale the rest to sum to one.

        Scaling is proportional, so alpha keeps dominating.
        """
        vals = [self.alpha, self.beta if gland else 0.0, self.gamma if size else 0.0,
                self.eta if rec else 0.0]
        total = sum(vals)
        return LossWeights(*(v / total for v in vals))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "eta": self.eta}


def total_loss(l_nodule, l_gland, l_size, l_rec, weights: LossWeights) -> Tensor:
    """alpha·l_nodule + beta·l_gland + gamma·l_size + eta·l_rec.

    Components may be Tensors, plain floats or ``None`` (treated as 0).
    Terms whose weight is zero are skipped entirely, so a disabled branch
    contributes neither value nor gradient.
    """
    weights.validate()
    out: Optional[Tensor] = None
    for w, term in zip(weights.as_tuple(), (l_nodule, l_gland, l_size, l_rec)):
        if w == 0 or term is None:
            continue
        t = term if isinstance(term, Tensor) else Tensor(np.float32(term))
        piece = ops.mul(t, float(w))
        out = piece if out is None else ops.add(out, piece)
    return out if out is not None else Tensor(np.float32(0.0))
