"""Minimal parameter containers and layers on top of the autodiff core."""

from __future__ import annotations

import hashlib
from typing import Iterator, Optional

import numpy as np

from ..autodiff import Tensor, ops


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Walks attributes in definition order to find parameters and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{key}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            if name in state:
                if state[name].shape != p.shape:
                    raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
                p.data[...] = state[name]


def parameter_hash(params: Iterator[tuple[str, Tensor]]) -> str:
    """SHA-256 over names, shapes and raw bytes, in iteration order."""
    h = hashlib.sha256()
    for name, p in params:
        h.update(name.encode())
        h.update(repr(p.shape).encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


class Linear(Module):
    """``x @ weight + bias`` over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 gain: float = 1.0):
        std = gain / np.sqrt(d_in)
        self.weight = parameter(rng.standard_normal((d_in, d_out)) * std)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return ops.add_bias(y, self.bias, axis=-1) if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 gain: float = np.sqrt(2.0)):
        std = gain / np.sqrt(c_in * k * k)
        self.weight = parameter(rng.standard_normal((c_out, c_in, k, k)) * std)
        self.bias = parameter(np.zeros(c_out))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, gain: float = 1.0):
        self.gamma = parameter(np.full(d, gain))
        self.beta = parameter(np.zeros(d))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self._eps)


def zero_(t: Optional[Tensor]) -> None:
    if t is not None:
        t.data[...] = 0.0
