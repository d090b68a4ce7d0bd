"""Query-based mask-classification decoders with coarse-to-fine masked attention.

Each segmentation decoder has two paths:

* a transformer path: learnable queries produce per-query soft masks
  ``S_t = sigmoid(P_t · Fᵀ)`` over the decoder grid; the hard masks
  ``Z_t = [S_t > τ]`` restrict each query's cross-attention to its current
  foreground (additive 0 / -inf bias) while the queries are refined;
* a U-Net style CNN path over the encoder skips.

The two are fused into one full-resolution probability map.

Queries are ``N×N_q×d_dec``; the projected feature matrix ``F`` is
``N×G×d_dec`` with ``G`` grid positions in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import DimensionError
from .config import ModelConfig
from .encoder import EncoderOutput
from .nn import Conv2d, LayerNorm, Linear, Module, parameter


# ----------------------------------------------------------------------------
# functional core
# ----------------------------------------------------------------------------

def project_features(finest: Tensor, transformer_map: Tensor, proj: Linear,
                     norm: Optional[LayerNorm] = None) -> Tensor:
    """Upsample F_T to the finest CNN grid, concatenate channels, project to d_dec.

    An optional LayerNorm over channels keeps the per-position features
    centred, so query-feature dot products start near zero instead of being
    dominated by a shared offset.
    """
    if finest.ndim != 4 or transformer_map.ndim != 4 or finest.shape[0] != transformer_map.shape[0]:
        raise DimensionError(f"feature maps {finest.shape} and {transformer_map.shape} do not align")
    n, _, gh, gw = finest.shape
    up = ops.resample2d(transformer_map, gh, gw, "bilinear")
    cat = ops.concat([up, finest], axis=1)
    if cat.shape[1] != proj.weight.shape[0]:
        raise DimensionError(f"projection expects {proj.weight.shape[0]} channels, got {cat.shape[1]}")
    flat = ops.transpose(ops.reshape(cat, (n, cat.shape[1], gh * gw)), (0, 2, 1))
    F = proj(flat)
    if norm is not None:
        F = norm(ops.sub(F, ops.expand(ops.mean(F, axis=1, keepdims=True), F.shape)))
    return F


def soft_masks(P: Tensor, F: Tensor) -> Tensor:
    """S = sigmoid(P · Fᵀ): one soft map per query over the grid."""
    return ops.sigmoid(ops.matmul(P, ops.swap_last(F)))


def initial_mask(P0: Tensor, F: Tensor, tau: float = 0.5) -> tuple[np.ndarray, Tensor]:
    """Return (Z_0, S_0) with Z_0 = [S_0 > τ] (strict)."""
    S = soft_masks(P0, F)
    return (S.data > tau).astype(np.uint8), S


refine_mask = initial_mask


def attention_bias(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Additive mask: 0 where Z = 1, -inf elsewhere.

    Rows with no foreground at all get a zero bias (plain attention) since
    the softmax of an all -inf row is undefined. Returns the bias and a
    boolean array flagging those fallback rows.
    """
    Z = np.asarray(Z)
    bias = np.where(Z == 1, 0.0, -np.inf).astype(np.float32)
    empty = ~np.any(Z == 1, axis=-1)
    bias[empty] = 0.0
    return bias, empty


def cross_attention(P: Tensor, F: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor,
                    bias: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
    """softmax((P W_q)(F W_k)ᵀ + bias) · (F W_v); returns (update, weights)."""
    logits = ops.matmul(ops.matmul(P, W_q), ops.swap_last(ops.matmul(F, W_k)))
    if bias is not None:
        logits = ops.add(logits, Tensor(bias))
    weights = ops.softmax(logits, axis=-1)
    return ops.matmul(weights, ops.matmul(F, W_v)), weights


def refine_queries(P: Tensor, F: Tensor, Z: np.ndarray, W_q: Tensor, W_k: Tensor,
                   W_v: Tensor) -> tuple[Tensor, Tensor]:
    """P_{t+1} = P_t + masked cross-attention; returns (P_{t+1}, attention weights)."""
    bias, _ = attention_bias(Z)
    update, weights = cross_attention(P, F, W_q, W_k, W_v, bias)
    if update.shape != P.shape:
        P = ops.expand(P, update.shape)
    return ops.add(P, update), weights


def classify(P: Tensor, W_fc: Tensor) -> tuple[Tensor, np.ndarray]:
    """O = P · W_fc and ŷ = argmax over classes (ties -> lowest index)."""
    O = ops.matmul(P, W_fc)
    return O, np.argmax(O.data, axis=-1)


def foreground_probability(O: Tensor) -> Tensor:
    """Softmax mass on the non-background classes (1..K-1), per query."""
    k = O.shape[-1]
    pick = np.ones((k, 1), dtype=np.float32)
    pick[0] = 0.0
    return ops.reshape(ops.matmul(ops.softmax(O, axis=-1), Tensor(pick)), O.shape[:-1])


def union_map(S: Tensor, weights: Tensor) -> Tensor:
    """1 - Π_q (1 - w_q S_q) over the query axis (axis 1), in [0, 1].

    For a single query, or binary maps, this equals the clamped sum.
    """
    miss = None
    for q in range(S.shape[1]):
        w = ops.reshape(ops.select(weights, q, axis=1), (S.shape[0], 1))
        term = ops.sub(1.0, ops.mul(ops.expand(w, (S.shape[0], S.shape[-1])), ops.select(S, q, axis=1)))
        miss = term if miss is None else ops.mul(miss, term)
    return ops.sub(1.0, miss)


def assemble_segmentation(S: Tensor, weights: Tensor, cnn_logits: Tensor,
                          grid: tuple[int, int]) -> Tensor:
    """Fuse query masks and the CNN path into an ``N×1×H×W`` probability map.

    The weighted union of query maps is upsampled bilinearly to the CNN
    output size and averaged with the CNN path's sigmoid.
    """
    return fuse(union_map(S, weights), cnn_logits, grid)


def fuse(query_union: Tensor, cnn_logits: Tensor, grid: tuple[int, int]) -> Tensor:
    n = query_union.shape[0]
    h, w = cnn_logits.shape[-2:]
    q = ops.reshape(query_union, (n, 1, grid[0], grid[1]))
    q = ops.clamp(ops.resample2d(q, h, w, "bilinear"), 0.0, 1.0)
    return ops.mul(ops.add(q, ops.sigmoid(cnn_logits)), 0.5)


# ----------------------------------------------------------------------------
# modules
# ----------------------------------------------------------------------------

@dataclass
class DecoderTrace:
    soft_masks: list[Tensor] = field(default_factory=list)      # S_0..S_T
    hard_masks: list[np.ndarray] = field(default_factory=list)  # Z_0..Z_T
    attention: list[np.ndarray] = field(default_factory=list)
    class_scores: Optional[Tensor] = None                       # O
    labels: Optional[np.ndarray] = None                         # ŷ
    queries: Optional[Tensor] = None                            # P_T


@dataclass
class DecoderOutput:
    mask: Tensor          # N×1×H×W fused probability
    cnn_logits: Tensor    # N×1×H×W
    query_map: Tensor     # N×G weighted union of query masks
    trace: DecoderTrace


class QueryDecoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        d = config.dec_dim
        self.proj = Linear(config.embed_dim + config.cnn_channels[0], d, rng)
        self.feature_norm = LayerNorm(d, gain=1.0 / np.sqrt(d))
        self.queries = parameter(rng.standard_normal((config.num_queries, d)))
        std = 1.0 / np.sqrt(d)
        self.W_q = [parameter(rng.standard_normal((d, d)) * std) for _ in range(config.iterations)]
        self.W_k = [parameter(rng.standard_normal((d, d)) * std) for _ in range(config.iterations)]
        self.W_v = [parameter(rng.standard_normal((d, d)) * std) for _ in range(config.iterations)]
        self.W_fc = parameter(rng.standard_normal((d, config.num_classes)) * std)
        self._tau = config.threshold

    def __call__(self, F: Tensor, frozen_masks: Optional[Sequence[np.ndarray]] = None) -> DecoderTrace:
        n = F.shape[0]
        P = ops.expand(self.queries, (n, *self.queries.shape))
        trace = DecoderTrace()
        Z, S = initial_mask(P, F, self._tau)
        for t in range(len(self.W_q)):
            if frozen_masks is not None:
                Z = frozen_masks[t]
            trace.soft_masks.append(S)
            trace.hard_masks.append(Z)
            P, attn = refine_queries(P, F, Z, self.W_q[t], self.W_k[t], self.W_v[t])
            trace.attention.append(attn.data)
            Z, S = refine_mask(P, F, self._tau)
        trace.soft_masks.append(S)
        trace.hard_masks.append(Z)
        trace.class_scores, trace.labels = classify(P, self.W_fc)
        trace.queries = P
        return trace


class CNNDecoder(Module):
    """U-Net style upsampling path; returns one-channel logits at input size."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        ch = config.cnn_channels
        self.bottom = Conv2d(config.embed_dim + ch[-1], ch[-1], 3, rng)
        self.ups = [Conv2d(ch[i + 1] + ch[i], ch[i], 3, rng) for i in reversed(range(len(ch) - 1))]
        self.full = Conv2d(ch[0] + config.in_channels, ch[0], 3, rng)
        self.head = Conv2d(ch[0], 1, 1, rng, gain=1.0)

    def __call__(self, enc: EncoderOutput, x: Tensor) -> Tensor:
        skips = enc.cnn_skips
        deep = skips[-1]
        t = ops.resample2d(enc.transformer_map, *deep.shape[-2:])
        y = ops.relu(self.bottom(ops.concat([t, deep], axis=1)))
        for conv, skip in zip(self.ups, reversed(skips[:-1])):
            y = ops.resample2d(y, *skip.shape[-2:])
            y = ops.relu(conv(ops.concat([y, skip], axis=1)))
        y = ops.resample2d(y, *x.shape[-2:])
        y = ops.relu(self.full(ops.concat([y, x], axis=1)))
        return self.head(y)


class SegmentationDecoder(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.query = QueryDecoder(config, rng)
        self.cnn = CNNDecoder(config, rng)

    def __call__(self, enc: EncoderOutput, x: Tensor, class_mode: str = "soft",
                 frozen_masks: Optional[Sequence[np.ndarray]] = None) -> DecoderOutput:
        finest = enc.cnn_skips[0]
        F = project_features(finest, enc.transformer_map, self.query.proj, self.query.feature_norm)
        trace = self.query(F, frozen_masks)
        if class_mode == "soft":
            weights = foreground_probability(trace.class_scores)
        elif class_mode == "hard":
            weights = Tensor((trace.labels > 0).astype(np.float32))
        else:
            raise ValueError(f"class_mode must be 'soft' or 'hard', got {class_mode!r}")
        logits = self.cnn(enc, x)
        union = union_map(trace.soft_masks[-1], weights)
        mask = fuse(union, logits, finest.shape[-2:])
        return DecoderOutput(mask=mask, cnn_logits=logits, query_map=union, trace=trace)
