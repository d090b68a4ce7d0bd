"""Nodule-size regression head and the reconstruction decoder."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import DimensionError
from .config import ModelConfig
from .nn import Conv2d, Linear, Module


class SizeHead(Module):
    """sigmoid(MLP(f)) with one GELU hidden layer of width d_enc."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.fc1 = Linear(d, d, rng)
        self.fc2 = Linear(d, 1, rng)

    def logit(self, f: Tensor) -> Tensor:
        return ops.reshape(self.fc2(ops.gelu(self.fc1(f))), f.shape[:-1])

    def __call__(self, f: Tensor) -> Tensor:
        return ops.sigmoid(self.logit(f))


predict_size = SizeHead.__call__


class ReconstructionDecoder(Module):
    """D_REC applied to F_C + F_T.

    The deepest CNN map is projected by a 1×1 conv to d_enc channels and
    resampled onto the token grid so it can be added to F_T; the sum is then
    upsampled by factors of two (conv + ReLU each step) to the input size and
    mapped to one channel with no output activation.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.embed_dim
        self.align = Conv2d(config.cnn_channels[-1], d, 1, rng, gain=1.0)
        self.ups = []
        size = config.grid[0]
        prev = d
        while size < config.image_size[0]:
            c = max(8, prev // 2)
            self.ups.append(Conv2d(prev, c, 3, rng))
            prev = c
            size *= 2
        self.out = Conv2d(prev, config.in_channels, 3, rng, gain=1.0)
        self._config = config

    def __call__(self, deepest: Tensor, transformer_map: Tensor) -> Tensor:
        gh, gw = transformer_map.shape[-2:]
        aligned = ops.resample2d(self.align(deepest), gh, gw)
        if aligned.shape != transformer_map.shape:
            raise DimensionError(f"cannot add F_C {aligned.shape} to F_T {transformer_map.shape}")
        y = ops.add(aligned, transformer_map)
        h, w = self._config.image_size
        for conv in self.ups:
            y = ops.resample2d(y, min(2 * y.shape[-2], h), min(2 * y.shape[-1], w))
            y = ops.relu(conv(y))
        y = ops.resample2d(y, h, w)
        return self.out(y)


def reconstruct(head: ReconstructionDecoder, cnn_final: Tensor, transformer_map: Tensor) -> Tensor:
    return head(cnn_final, transformer_map)
