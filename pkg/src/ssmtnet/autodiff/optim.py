"""Adam with decoupled weight decay, and the cosine-annealing schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..errors import NumericalFault
from .tensor import DTYPE, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros(param.shape, dtype=DTYPE), np.zeros(param.shape, dtype=DTYPE))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0, name: str = "<param>") -> None:
    """Apply one in-place Adam update to ``param`` and advance ``state``.

    Weight decay is decoupled (``param *= 1 - lr * weight_decay``) and applied
    before the moment-based step.
    """
    if not np.all(np.isfinite(grad)):
        raise NumericalFault(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1 ** t)
    v_hat = state.v / (1.0 - beta2 ** t)
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(DTYPE)


class Adam:
    """Adam over a fixed, named parameter set.

    Parameters outside ``params`` are never touched, which is how the
    pretraining phase keeps decoder and size-head weights frozen.
    """

    def __init__(self, params: Iterable[tuple[str, Tensor]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: dict[str, Tensor] = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.states: dict[str, AdamState] = {
            name: AdamState.zeros_like(p.data) for name, p in self.params.items()
        }

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, grad, self.states[name], lr, self.beta1, self.beta2,
                      self.eps, self.weight_decay, name=name)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, st in self.states.items():
            out[f"adam.m.{name}"] = st.m
            out[f"adam.v.{name}"] = st.v
            out[f"adam.step.{name}"] = np.array([st.step], dtype=DTYPE)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, st in self.states.items():
            st.m[...] = arrays[f"adam.m.{name}"]
            st.v[...] = arrays[f"adam.v.{name}"]
            st.step = int(arrays[f"adam.step.{name}"][0])


def cosine_lr(step: int, total_steps: int, lr0: float = 1e-3, lr_min: float = 1e-6) -> float:
    """Cosine annealing from ``lr0`` at step 0 to ``lr_min`` at ``total_steps``."""
    if total_steps <= 0 or step >= total_steps:
        return lr_min
    step = max(step, 0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))
