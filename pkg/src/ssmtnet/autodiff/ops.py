"""Differentiable primitives.

Each function computes its forward value with numpy and registers a closure
returning one gradient per input (``None`` for inputs that take no gradient).
Elementwise binary ops accept identical shapes or a single-element operand;
anything else is a :class:`DimensionError`. Bias addition along one axis is
its own primitive (:func:`add_bias`).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import erf, expit

from ..errors import DegenerateRowError, DimensionError
from ..interp import interp_matrix
from .tensor import DTYPE, Tensor, as_tensor, make_result

Operand = Union[Tensor, float, int]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_kink_record: Optional[list] = None
_kink_replay: Optional[Iterator[np.ndarray]] = None


@contextmanager
def record_kinks() -> Iterator[list]:
    """Collect the active sets of the piecewise-linear ops (relu, clamp).

    relu records a boolean ``x > 0`` mask; clamp records an int8 side array
    (-1 below ``lo``, 0 inside, 1 above ``hi``), in execution order.
    """
    global _kink_record
    outer, _kink_record = _kink_record, []
    try:
        yield _kink_record
    finally:
        _kink_record = outer


@contextmanager
def frozen_kinks(active_sets: Sequence[np.ndarray]) -> Iterator[None]:
    """Replay recorded active sets instead of recomputing them.

    Inside this context relu and clamp act as the fixed linear (or constant)
    pieces chosen at the recording point, so a forward pass is smooth in its
    inputs. Finite-difference checks use this to difference across kinks;
    at the recording point values and gradients are unchanged. The forward
    pass must execute the same relu/clamp calls in the same order.
    """
    global _kink_replay
    outer, _kink_replay = _kink_replay, iter(active_sets)
    try:
        yield
    finally:
        _kink_replay = outer


def _active_set(computed: np.ndarray) -> np.ndarray:
    if _kink_replay is not None:
        try:
            frozen = next(_kink_replay)
        except StopIteration:
            raise DimensionError("frozen_kinks: more relu/clamp calls than recorded active sets") from None
        if frozen.shape != computed.shape:
            raise DimensionError(f"frozen active set {frozen.shape} does not match {computed.shape}")
        return frozen
    if _kink_record is not None:
        _kink_record.append(computed)
    return computed


def _f32(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def _binary(a: Operand, b: Operand, name: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return a, b, a.data, b.data
    if a.size == 1:
        return a, b, a.data.reshape(()), b.data
    if b.size == 1:
        return a, b, a.data, b.data.reshape(())
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _fit(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return _f32(g.sum(dtype=np.float64)).reshape(shape)


def add(a: Operand, b: Operand) -> Tensor:
    a, b, x, y = _binary(a, b, "add")
    return make_result(x + y, (a, b), lambda g: (_fit(g, a.shape), _fit(g, b.shape)))


def sub(a: Operand, b: Operand) -> Tensor:
    a, b, x, y = _binary(a, b, "sub")
    return make_result(x - y, (a, b), lambda g: (_fit(g, a.shape), _fit(-g, b.shape)))


def mul(a: Operand, b: Operand) -> Tensor:
    a, b, x, y = _binary(a, b, "mul")
    return make_result(x * y, (a, b), lambda g: (_fit(g * y, a.shape), _fit(g * x, b.shape)))


def div(a: Operand, b: Operand) -> Tensor:
    a, b, x, y = _binary(a, b, "div")
    out = x / y

    def grad(g):
        ga = g / y
        return _fit(ga, a.shape), _fit(-ga * out, b.shape)

    return make_result(out, (a, b), grad)


def add_bias(x: Tensor, bias: Tensor, axis: int = -1) -> Tensor:
    """``x + bias`` with a 1-D ``bias`` laid along ``axis``."""
    axis = axis % x.ndim
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.ndim) if i != axis)

    def grad(g):
        return g, _f32(g.sum(axis=other, dtype=np.float64))

    return make_result(x.data + bias.data.reshape(view), (x, bias), grad)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data).astype(DTYPE)
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = _active_set(x.data > 0)
    return make_result(np.where(mask, x.data, 0.0).astype(DTYPE), (x,), lambda g: (g * mask,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    v = x.data.astype(np.float64)
    cdf = 0.5 * (1.0 + erf(v * _INV_SQRT2))
    pdf = np.exp(-0.5 * v * v) * _INV_SQRT2PI
    dydx = _f32(cdf + v * pdf)
    return make_result(_f32(v * cdf), (x,), lambda g: (g * dydx,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return make_result(y, (x,), lambda g: (g * 0.5 / y,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    side = _active_set(np.where(x.data < lo, -1, np.where(x.data > hi, 1, 0)).astype(np.int8))
    inside = side == 0
    out = np.where(inside, x.data, np.where(side < 0, lo, hi)).astype(DTYPE)
    return make_result(out, (x,), lambda g: (g * inside,))


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ----------------------------------------------------------------------------
# reductions and shape plumbing
# ----------------------------------------------------------------------------

def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _expand_back(g: np.ndarray, shape, axes, keepdims) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    out = _f32(x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64))
    return make_result(out, (x,), lambda g: (_f32(_expand_back(g, x.shape, axes, keepdims)),))


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    out = _f32(x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64))
    return make_result(out, (x,), lambda g: (_f32(_expand_back(g, x.shape, axes, keepdims) / n),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    axis = axis % xs[0].ndim
    for t in xs[1:]:
        if t.ndim != xs[0].ndim or any(
            t.shape[i] != xs[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(f"concat: shapes {[u.shape for u in xs]} disagree off axis {axis}")
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def grad(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return make_result(out, xs, grad)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``x`` to ``shape`` (numpy rules: new leading axes, size-1 axes)."""
    shape = tuple(shape)
    try:
        out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}") from exc
    return make_result(out, (x,), lambda g: (_f32(_unbroadcast(g, x.shape)),))


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """Take one index along ``axis``, dropping that axis."""
    axis = axis % x.ndim
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise DimensionError(f"select: index {index} out of range for axis {axis} of {x.shape}")
    out = np.ascontiguousarray(np.take(x.data, index, axis=axis))

    def grad(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return make_result(out, (x,), grad)


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, d in enumerate(shape):
        if d == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    For 2-D inputs this is the plain ``m×k @ k×n`` product.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from exc

    def grad(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), grad)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; ``-inf`` entries get exactly zero weight."""
    peak = x.data.max(axis=axis, keepdims=True)
    if np.any(np.isneginf(peak)):
        raise DegenerateRowError("softmax: a row along the reduction axis is entirely -inf")
    e = np.exp(x.data - peak)
    y = _f32(e / e.sum(axis=axis, keepdims=True, dtype=np.float64))

    def grad(g):
        inner = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64)
        return (_f32(y * (g - inner)),)

    return make_result(y, (x,), grad)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm: gamma {gamma.shape}/beta {beta.shape} vs last axis {d}")
    v = x.data.astype(np.float64)
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv
    out = _f32(xhat * gamma.data + beta.data)
    lead = tuple(range(x.ndim - 1))

    def grad(g):
        g64 = g.astype(np.float64)
        dxhat = g64 * gamma.data
        dx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return _f32(dx), _f32((g64 * xhat).sum(axis=lead)), _f32(g64.sum(axis=lead))

    return make_result(out, (x, gamma, beta), grad)


# ----------------------------------------------------------------------------
# spatial
# ----------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           pad: Optional[int] = None) -> Tensor:
    """2-D cross-correlation.

    ``x`` is ``C_in×H×W`` or batched ``N×C_in×H×W``; ``w`` is
    ``C_out×C_in×k×k`` with odd ``k``. Padding defaults to ``k // 2``.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be C_out×C_in×k×k with odd k, got {w.shape}")
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    xd = x.data[None] if squeeze else x.data
    n, cin, h, wd = xd.shape
    cout, kcin, k, _ = w.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    p = k // 2 if pad is None else pad
    if k > h + 2 * p or k > wd + 2 * p:
        raise DimensionError(f"conv2d: kernel {k}×{k} larger than padded input {h + 2 * p}×{wd + 2 * p}")
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    cols, ho, wo = _im2col(xp, k, stride)
    wmat = w.data.reshape(cout, cin * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias {b.shape} does not match {cout} output channels")
        out = out + b.data.reshape(1, cout, 1, 1)
    out = np.ascontiguousarray(out)
    if squeeze:
        out = out[0]

    def grad(g):
        g4 = g[None] if squeeze else g
        gm = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = (gm.T @ cols).reshape(w.shape)
        # input gradient = transposed convolution: dilate by stride, pad k-1,
        # correlate with the spatially flipped, channel-swapped kernel
        span_h, span_w = (ho - 1) * stride + 1, (wo - 1) * stride + 1
        gd = np.zeros((n, cout, span_h + 2 * (k - 1), span_w + 2 * (k - 1)), dtype=DTYPE)
        gd[:, :, k - 1:k - 1 + span_h:stride, k - 1:k - 1 + span_w:stride] = g4
        wflip = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(cin, cout * k * k)
        gcols, gh_, gw_ = _im2col(gd, k, 1)
        gxp = np.zeros(xp.shape, dtype=DTYPE)
        gxp[:, :, :gh_, :gw_] = (gcols @ wflip.T).reshape(n, gh_, gw_, cin).transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + wd] if p else gxp
        gx = np.ascontiguousarray(gx[0] if squeeze else gx)
        grads = [gx, gw]
        if b is not None:
            grads.append(_f32(g4.sum(axis=(0, 2, 3), dtype=np.float64)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, grad)


def resample2d(x: Tensor, out_h: int, out_w: int, mode: str = "bilinear") -> Tensor:
    """Resize the last two axes (bilinear align-corners or nearest)."""
    if x.ndim < 2:
        raise DimensionError(f"resample2d: need at least 2 axes, got {x.shape}")
    if out_h <= 0 or out_w <= 0:
        raise DimensionError(f"resample2d: output size must be positive, got {out_h}×{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x
    ry64, rx64 = interp_matrix(h, out_h, mode), interp_matrix(w, out_w, mode)
    # f64 forward so interpolation weights sum to one exactly (constants stay constant)
    out = _f32(ry64 @ x.data.astype(np.float64) @ rx64.T)
    ry, rx = _f32(ry64), _f32(rx64)
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,))


# ----------------------------------------------------------------------------
# losses built from primitives are in ssmtnet.training.losses
# ----------------------------------------------------------------------------

def square(x: Tensor) -> Tensor:
    return mul(x, x)
