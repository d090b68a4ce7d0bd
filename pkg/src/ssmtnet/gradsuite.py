"""Finite-difference gradient suite over every differentiable primitive and the full loss.

Primitive checks use inputs of at most 8 per dimension and tolerance
1e-3. The end-to-end check builds the desk-scale network (d=32, two
layers, three refinement iterations, four queries) on a 16×16 input,
perturbs a random sample of entries from every parameter tensor and
compares the pooled gradient vector with tolerance 1e-2.

The network is only piecewise smooth: decoder masks are thresholds, and
relu/clamp have kinks. A central difference that straddles a kink measures
a blend of two one-sided slopes, not the derivative, and in float32 the step
cannot be shrunk below the kinks without drowning in rounding noise (the
loss is resolved to about 1e-7). So the base point's hard decoder masks and
relu/clamp active sets are recorded once and frozen for every perturbed
evaluation. The frozen loss is smooth in all parameters, and it agrees with
the real loss, and has the same gradient, at the base point. The kink
primitives themselves are checked separately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Tensor, backward, no_grad, ops
from .autodiff.gradcheck import GradCheckResult, gradcheck, relative_error
from .data import PhantomConfig, phantom_set
from .model import ModelConfig, SSMTNet
from .training.losses import LossWeights, charbonnier, dice_loss, size_loss, total_loss

PRIMITIVE_TOL = 1e-3
END_TO_END_TOL = 1e-2


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    """Values with |x| >= margin, for ops with a kink at 0."""
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def primitive_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    n = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)  # noqa: E731
    target = (rng.random((1, 1, 3, 4)) > 0.5).astype(np.float32)
    return [
        ("add", ops.add, [n(3, 4), n(3, 4)]),
        ("sub", ops.sub, [n(3, 4), n(3, 4)]),
        ("mul", ops.mul, [n(3, 4), n(3, 4)]),
        ("div", ops.div, [n(3, 4), pos(3, 4)]),
        ("add_bias", lambda x, b: ops.add_bias(x, b, axis=1), [n(2, 3, 4), n(3)]),
        ("sigmoid", ops.sigmoid, [n(4, 5)]),
        ("relu", ops.relu, [_away_from_zero(rng, (4, 5))]),
        ("gelu", ops.gelu, [n(4, 5)]),
        ("sqrt", ops.sqrt, [pos(4, 5)]),
        ("square", ops.square, [n(4, 5)]),
        ("clamp", lambda x: ops.clamp(x, -0.5, 0.5),
         [np.where(rng.random((4, 5)) < 0.5, rng.uniform(-0.4, 0.4, (4, 5)), _away_from_zero(rng, (4, 5), 0.7))]),
        ("sum", lambda x: ops.sum(x, axis=1), [n(3, 4, 5)]),
        ("mean", lambda x: ops.mean(x, axis=(0, 2), keepdims=True), [n(3, 4, 5)]),
        ("reshape", lambda x: ops.reshape(x, (6, 4)), [n(2, 3, 4)]),
        ("transpose", lambda x: ops.transpose(x, (2, 0, 1)), [n(2, 3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=1), [n(2, 3), n(2, 5)]),
        ("expand", lambda x: ops.expand(x, (3, 4, 5)), [n(4, 1)]),
        ("select", lambda x: ops.select(x, 1, axis=1), [n(2, 3, 4)]),
        ("matmul", ops.matmul, [n(3, 4), n(4, 5)]),
        ("matmul_batched", ops.matmul, [n(2, 3, 4), n(4, 5)]),
        ("softmax", lambda x: ops.softmax(x, axis=-1), [n(3, 6)]),
        ("softmax_masked", lambda x: ops.softmax(ops.add(x, Tensor(np.where(np.eye(3, 6) > 0, -np.inf, 0.0))), axis=-1),
         [n(3, 6)]),
        ("layer_norm", ops.layer_norm, [n(3, 8), n(8), n(8)]),
        ("conv2d", lambda x, w, b: ops.conv2d(x, w, b), [n(2, 3, 6, 6), n(4, 3, 3, 3), n(4)]),
        ("conv2d_stride2", lambda x, w, b: ops.conv2d(x, w, b, stride=2), [n(1, 2, 7, 7), n(3, 2, 3, 3), n(3)]),
        ("resample_bilinear", lambda x: ops.resample2d(x, 8, 7, "bilinear"), [n(1, 2, 4, 3)]),
        ("resample_nearest", lambda x: ops.resample2d(x, 8, 6, "nearest"), [n(1, 2, 4, 3)]),
        ("dice_loss", lambda p: dice_loss(p, target), [rng.uniform(0.1, 0.9, (1, 1, 3, 4))]),
        ("charbonnier", lambda r: charbonnier(r, np.full((1, 1, 5, 5), 0.3, np.float32)), [n(1, 1, 5, 5)]),
        ("size_loss", lambda v: size_loss(v, np.array([0.25, 0.1, 0.6], np.float32)), [rng.uniform(0, 1, 3)]),
    ]


def check_primitives(seed: int = 0, tol: float = PRIMITIVE_TOL) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, arrays in primitive_cases(rng):
        inputs = [Tensor(a) for a in arrays]
        for i, r in enumerate(gradcheck(fn, inputs, tol=tol, seed=seed)):
            r.name = f"{name}[{i}]"
            results.append(r)
    return results


E2E_IMAGE = (16, 16)


def _end_to_end_setup(seed: int):
    config = ModelConfig(image_size=E2E_IMAGE)
    model = SSMTNet(config, seed=seed)
    samples = phantom_set(PhantomConfig(height=config.image_size[0], width=config.image_size[1]), 2, seed=seed)
    x = np.stack([s.image for s in samples])[:, None]
    nod = np.stack([s.nodule_mask for s in samples]).astype(np.float32)[:, None]
    gl = np.stack([s.gland_mask for s in samples]).astype(np.float32)[:, None]
    sizes = np.array([s.size_label for s in samples], np.float32)
    with no_grad():
        base = model(x)
    frozen = {"nodule": base.nodule.trace.hard_masks[:-1], "gland": base.gland.trace.hard_masks[:-1]}
    weights = LossWeights()

    def raw_loss() -> Tensor:
        out = model(x, frozen_masks=frozen)
        return total_loss(dice_loss(out.nodule.mask, nod), dice_loss(out.gland.mask, gl),
                          size_loss(out.size, sizes), charbonnier(out.reconstruction, x), weights)

    with no_grad(), ops.record_kinks() as active_sets:
        raw_loss()

    def loss_fn() -> Tensor:
        with ops.frozen_kinks(active_sets):
            return raw_loss()

    return model, loss_fn, raw_loss


def check_end_to_end(seed: int = 0, per_tensor: int = 4, h: float = 3e-3,
                     tol: float = END_TO_END_TOL) -> tuple[GradCheckResult, dict[str, float]]:
    """Pooled relative error over ``per_tensor`` sampled entries of every parameter.

    Returns the overall result and a per-group breakdown (informational).
    """
    model, loss_fn, _ = _end_to_end_setup(seed)
    model.zero_grad()
    backward(loss_fn())
    rng = np.random.default_rng(seed)
    analytic, numeric, groups = [], [], []
    for name, p in model.named_parameters():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1) if p.grad is not None else np.zeros_like(flat)
        picks = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        for pos in picks:
            orig = flat[pos]
            flat[pos] = orig + h
            with no_grad():
                up = float(loss_fn().data)
            flat[pos] = orig - h
            with no_grad():
                down = float(loss_fn().data)
            flat[pos] = orig
            analytic.append(float(grad[pos]))
            numeric.append((up - down) / (2 * h))
            groups.append(name.split(".", 1)[0])
    a, nmr, g = np.array(analytic), np.array(numeric), np.array(groups)
    per_group = {k: relative_error(a[g == k], nmr[g == k]) for k in dict.fromkeys(groups)}
    return GradCheckResult("end_to_end_total_loss", relative_error(a, nmr), tol, len(a)), per_group


@dataclass
class SuiteReport:
    results: list[GradCheckResult]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


def run_suite(seed: int = 0, end_to_end: bool = True, log: Optional[Callable[[str], None]] = None) -> SuiteReport:
    start = time.perf_counter()
    results = check_primitives(seed)
    if end_to_end:
        overall, groups = check_end_to_end(seed)
        results.append(overall)
        if log:
            for k, v in groups.items():
                log(f"  end-to-end group {k}: rel err {v:.2e}")
    if log:
        for r in results:
            log(f"{'PASS' if r.passed else 'FAIL'} {r.name:<28} rel err {r.rel_error:.2e} "
                f"(tol {r.tolerance:g}, {r.checked} entries)")
    return SuiteReport(results, time.perf_counter() - start)
