"""Central finite-difference gradient checking.

The numeric side never touches the tape: it perturbs raw input arrays,
reruns the forward under :func:`no_grad` and projects the output onto a
fixed random cotangent in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.rel_error)) and self.rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _projected(fn: Callable[..., Tensor], inputs: Sequence[Tensor], cot: np.ndarray) -> float:
    with no_grad():
        out = fn(*inputs)
    return float(np.sum(out.data.astype(np.float64) * cot))


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-3,
              tol: float = 1e-3, seed: int = 0, max_elements: Optional[int] = None,
              names: Optional[Sequence[str]] = None) -> list[GradCheckResult]:
    """Compare tape gradients of ``fn`` with central differences.

    ``fn`` may return any shape; it is reduced with a random cotangent so
    every output element contributes. ``max_elements`` limits the number of
    (randomly chosen) entries perturbed per input.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    cot = rng.standard_normal(out.shape) if out.size > 1 else np.ones(out.shape)
    loss = ops.sum(ops.mul(out, Tensor(cot))) if out.size > 1 else out
    backward(loss)

    results = []
    for idx, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            positions = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(len(positions))
        for k, pos in enumerate(positions):
            orig = flat[pos]
            flat[pos] = orig + h
            up = _projected(fn, inputs, cot)
            flat[pos] = orig - h
            down = _projected(fn, inputs, cot)
            flat[pos] = orig
            numeric[k] = (up - down) / (2.0 * h)
        name = names[idx] if names else (t.name or f"input{idx}")
        err = relative_error(analytic.reshape(-1)[positions], numeric)
        results.append(GradCheckResult(name, err, tol, len(positions)))
    return results
