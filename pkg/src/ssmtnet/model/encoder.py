"""Hybrid encoder: a ViT over raw image patches and a parallel strided CNN.

Layouts: images and feature maps are ``N×C×H×W``; tokens are ``N×L×d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import DimensionError
from .config import ModelConfig
from .nn import Conv2d, LayerNorm, Linear, Module, parameter


def patchify(x: Tensor, p: int) -> Tensor:
    """``N×C×H×W`` -> ``N×(HW/P²)×(P²C)``, patches in row-major order."""
    if x.ndim != 4:
        raise DimensionError(f"patchify expects N×C×H×W, got {x.shape}")
    n, c, h, w = x.shape
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    t = ops.reshape(x, (n, c, gh, p, gw, p))
    t = ops.transpose(t, (0, 2, 4, 1, 3, 5))
    return ops.reshape(t, (n, gh * gw, c * p * p))


def unpatchify(tokens: Tensor, p: int, h: int, w: int, c: int = 1) -> Tensor:
    n = tokens.shape[0]
    gh, gw = h // p, w // p
    t = ops.reshape(tokens, (n, gh, gw, c, p, p))
    t = ops.transpose(t, (0, 3, 1, 4, 2, 5))
    return ops.reshape(t, (n, c, h, w))


def tokens_to_map(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """``N×L×d`` -> ``N×d×gh×gw``."""
    n, _, d = tokens.shape
    t = ops.reshape(tokens, (n, grid[0], grid[1], d))
    return ops.transpose(t, (0, 3, 1, 2))


class PatchEmbedding(Module):
    def __init__(self, patch_dim: int, num_patches: int, d: int, rng: np.random.Generator):
        self.E = parameter(rng.standard_normal((patch_dim, d)) / np.sqrt(patch_dim))
        self.E_pos = parameter(rng.standard_normal((num_patches, d)) * 0.02)

    def __call__(self, patches: Tensor) -> Tensor:
        return embed(patches, self.E, self.E_pos)


def embed(patches: Tensor, E: Tensor, E_pos: Tensor) -> Tensor:
    """z_0[i] = patches[i] · E + E_pos[i]."""
    if patches.shape[-2] != E_pos.shape[0]:
        raise DimensionError(
            f"{patches.shape[-2]} patches but position table has {E_pos.shape[0]} rows"
        )
    z = ops.matmul(patches, E)
    return ops.add(z, ops.expand(E_pos, z.shape)) if z.ndim > 2 else ops.add(z, E_pos)


class MultiHeadSelfAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self._heads = heads
        self._last_attention = None

    def _split(self, t: Tensor) -> Tensor:
        n, length, d = t.shape
        t = ops.reshape(t, (n, length, self._heads, d // self._heads))
        return ops.transpose(t, (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        n, length, d = x.shape
        dh = d // self._heads
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / np.sqrt(dh))
        attn = ops.softmax(scores, axis=-1)
        self._last_attention = attn.data
        ctx = ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3))
        return self.out(ops.reshape(ctx, (n, length, d)))

    @property
    def last_attention(self):
        """Attention weights ``N×heads×L×L`` from the most recent call."""
        return self._last_attention


class TransformerLayer(Module):
    """Pre-norm block: z' = MSA(LN(z)) + z;  z_out = MLP(LN(z')) + z'."""

    def __init__(self, d: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        hidden = int(round(d * mlp_ratio))
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadSelfAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, z: Tensor) -> Tensor:
        z = ops.add(self.attn(self.ln1(z)), z)
        return ops.add(self.fc2(ops.gelu(self.fc1(self.ln2(z)))), z)

    def output_projections(self) -> list[Tensor]:
        return [self.attn.out.weight, self.attn.out.bias, self.fc2.weight, self.fc2.bias]


class CNNEncoder(Module):
    """Stages of (3×3 stride-2 conv, ReLU, 3×3 conv, ReLU); finest map first."""

    def __init__(self, in_channels: int, channels: tuple[int, ...], rng: np.random.Generator):
        self.stages = []
        prev = in_channels
        for c in channels:
            self.stages.append(_Stage(prev, c, rng))
            prev = c

    def __call__(self, x: Tensor) -> list[Tensor]:
        total = 2 ** len(self.stages)
        if x.shape[-1] < total or x.shape[-2] < total:
            raise DimensionError(f"input {x.shape[-2:]} smaller than total CNN stride {total}")
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


class _Stage(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.down = Conv2d(c_in, c_out, 3, rng, stride=2)
        self.conv = Conv2d(c_out, c_out, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv(ops.relu(self.down(x))))


@dataclass
class EncoderOutput:
    tokens: Tensor            # z_L, N×L×d_enc
    cnn_skips: list[Tensor]   # F_C, finest first, N×c_i×H/2^(i+1)×W/2^(i+1)
    transformer_map: Tensor   # F_T, N×d_enc×(H/P)×(W/P)
    pooled: Tensor            # f, N×d_enc (token mean)


class Encoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c, p, d = config.in_channels, config.patch_size, config.embed_dim
        self.patch = PatchEmbedding(p * p * c, config.num_patches, d, rng)
        self.layers = [TransformerLayer(d, config.num_heads, config.mlp_ratio, rng)
                       for _ in range(config.num_layers)]
        self.cnn = CNNEncoder(c, config.cnn_channels, rng)
        self._config = config

    def transformer(self, x: Tensor) -> Tensor:
        z = self.patch(patchify(x, self._config.patch_size))
        for layer in self.layers:
            z = layer(z)
        return z

    def __call__(self, x: Tensor) -> EncoderOutput:
        cfg = self._config
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, *cfg.image_size):
            raise DimensionError(
                f"encoder expects N×{cfg.in_channels}×{cfg.image_size[0]}×{cfg.image_size[1]}, got {x.shape}"
            )
        z = self.transformer(x)
        return EncoderOutput(
            tokens=z,
            cnn_skips=self.cnn(x),
            transformer_map=tokens_to_map(z, cfg.grid),
            pooled=ops.mean(z, axis=1),
        )
