"""Two-phase training: reconstruction pretraining, then joint supervised learning.

Randomness is derived, never carried: the epoch order comes from
``default_rng([seed, epoch])`` and each sample's augmentation from
``default_rng([seed, epoch, index])``. Resuming from a checkpoint therefore
only needs the counters, the parameters and the optimizer moments.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from ..autodiff import Adam, Tensor, backward, cosine_lr, ops
from ..data import AugmentationConfig, DatasetManifest, UltrasoundSample, augment, load_samples
from ..data.dataset import require_labeled
from ..errors import ConfigError, DatasetError
from ..evaluation.metrics import dsc, iou
from ..evaluation.predict import predict_masks
from ..model import SSMTNet
from . import checkpoint as ckpt
from .losses import LossWeights, charbonnier, dice_loss, size_loss, total_loss

log = logging.getLogger(__name__)

PHASES = ("pretrain", "supervised")
PRETRAIN_GROUPS = ("encoder", "reconstruction")
CSV_HEADER = ("epoch", "step", "lr", "loss_total", "loss_nodule", "loss_gland",
              "loss_size", "loss_rec", "val_iou", "val_dsc")
STATE_KEY = "__state__"
WEIGHTS_KEY = "__weights__"


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

@dataclass
class PhaseConfig:
    """Settings for one training phase.

    ``epochs`` full passes are run unless ``max_steps`` stops earlier; the
    cosine schedule spans the resulting number of optimizer steps.
    ``checkpoint_every`` is in epochs (0 = only the final checkpoint).
    """

    phase: str = "supervised"
    epochs: int = 300
    batch_size: int = 32
    lr0: float = 1e-3
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    seed: int = 42
    max_steps: Optional[int] = None
    augmentation: Optional[AugmentationConfig] = None
    eval_every: int = 1
    checkpoint_every: int = 1
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.lr0 < 0 or self.lr_min < 0 or self.weight_decay < 0:
            raise ConfigError("learning rates and weight decay must be >= 0")
        if self.eval_every < 1 or self.checkpoint_every < 0:
            raise ConfigError("eval_every must be >= 1 and checkpoint_every >= 0")

    def total_steps(self, n_samples: int) -> int:
        per_epoch = -(-n_samples // self.batch_size)
        total = self.epochs * per_epoch
        return total if self.max_steps is None else min(total, self.max_steps)


@dataclass(frozen=True)
class AblationFlags:
    """Which auxiliary branches join the supervised objective."""

    rec: bool = True
    gland: bool = True
    size: bool = True

    @classmethod
    def variant(cls, number: int) -> "AblationFlags":
        try:
            return VARIANTS[number]
        except KeyError:
            raise ConfigError(f"ablation variant must be 1-5, got {number}") from None

    def branches(self) -> tuple[str, ...]:
        out = ["nodule"]
        if self.gland:
            out.append("gland")
        if self.size:
            out.append("size")
        if self.rec:
            out.append("rec")
        return tuple(out)


VARIANTS = {
    1: AblationFlags(rec=False, gland=False, size=False),
    2: AblationFlags(rec=True, gland=False, size=False),
    3: AblationFlags(rec=True, gland=True, size=False),
    4: AblationFlags(rec=True, gland=False, size=True),
    5: AblationFlags(rec=True, gland=True, size=True),
}


@dataclass
class TrainState:
    """Everything a run needs to continue exactly where it stopped."""

    phase: str
    seed: int
    epoch: int = 0          # completed epochs
    step: int = 0           # completed optimizer steps
    best_val_dsc: float = -1.0
    history: list[dict] = field(default_factory=list)   # per-step losses, not persisted
    optimizer: Optional[Adam] = None

    def counters(self) -> dict:
        return {"phase": self.phase, "seed": self.seed, "epoch": self.epoch, "step": self.step,
                "best_val_dsc": self.best_val_dsc}


# ----------------------------------------------------------------------------
# data feeding
# ----------------------------------------------------------------------------

def worker_count() -> int:
    """Data workers, capped by ``SSMT_THREADS`` (default 1)."""
    raw = os.environ.get("SSMT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SSMT_THREADS must be an integer, got {raw!r}") from None


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _prepare(samples: Sequence[UltrasoundSample], aug: Optional[AugmentationConfig], seed: int,
             epoch: int, index: int) -> UltrasoundSample:
    s = samples[index]
    if aug is None:
        return s
    rng = np.random.default_rng([seed, epoch, index])
    return augment(s, aug, rng, pool=samples)


def iter_batches(samples: Sequence[UltrasoundSample], batch_size: int, seed: int, epoch: int,
                 aug: Optional[AugmentationConfig] = None) -> Iterator[list[UltrasoundSample]]:
    """Yield the epoch's batches in a seed-determined order.

    Augmentation may run on several threads, but results are consumed in
    submission order, so the batches do not depend on the worker count.
    """
    order = epoch_order(seed, epoch, len(samples))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    workers = worker_count()
    if workers == 1 or aug is None:
        for chunk in chunks:
            yield [_prepare(samples, aug, seed, epoch, int(i)) for i in chunk]
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for chunk in chunks:
            yield list(pool.map(lambda i: _prepare(samples, aug, seed, epoch, int(i)), chunk))


def _as_samples(data, size: tuple[int, int], with_masks: bool) -> list[UltrasoundSample]:
    if isinstance(data, DatasetManifest):
        return load_samples(data, size, with_masks=with_masks)
    samples = list(data)
    for s in samples:
        if s.shape != size:
            raise DatasetError(f"sample {s.stem!r} is {s.shape}, model expects {size}")
    return samples


# ----------------------------------------------------------------------------
# steps
# ----------------------------------------------------------------------------

def _images(batch: Sequence[UltrasoundSample]) -> np.ndarray:
    return np.stack([s.image for s in batch])[:, None]


def _masks(batch: Sequence[UltrasoundSample], attr: str) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``N×1×H×W`` masks and a per-sample presence vector."""
    shape = batch[0].shape
    present = np.array([getattr(s, attr) is not None for s in batch], dtype=np.float32)
    stack = np.stack([getattr(s, attr) if getattr(s, attr) is not None else np.zeros(shape, np.uint8)
                      for s in batch]).astype(np.float32)[:, None]
    return stack, present


def pretrain_losses(model: SSMTNet, batch: Sequence[UltrasoundSample]) -> dict[str, Tensor]:
    x = _images(batch)
    out = model(x, branches=("rec",))
    rec = charbonnier(out.reconstruction, x)
    return {"total": rec, "rec": rec}


def supervised_losses(model: SSMTNet, batch: Sequence[UltrasoundSample], weights: LossWeights,
                      flags: AblationFlags, class_mode: str = "soft") -> dict[str, Tensor]:
    """Component losses and their weighted total for one batch.

    ``weights`` must already be renormalized for ``flags``. A sample without
    a gland mask is left out of the gland term (its prediction is masked).
    """
    x = _images(batch)
    out = model(x, branches=flags.branches(), class_mode=class_mode)
    nod, _ = _masks(batch, "nodule_mask")
    terms: dict[str, Optional[Tensor]] = {"nodule": dice_loss(out.nodule.mask, nod),
                                          "gland": None, "size": None, "rec": None}
    if flags.gland:
        gl, present = _masks(batch, "gland_mask")
        if present.any():
            keep = Tensor(np.broadcast_to(present.reshape(-1, 1, 1, 1), gl.shape))
            terms["gland"] = dice_loss(ops.mul(out.gland.mask, keep), gl)
    if flags.size:
        labels = np.array([s.size_label if s.size_label is not None else 0.0 for s in batch], np.float32)
        present = np.array([s.size_label is not None for s in batch])
        terms["size"] = size_loss(out.size, labels, present)
    if flags.rec:
        terms["rec"] = charbonnier(out.reconstruction, x)
    terms["total"] = total_loss(terms["nodule"], terms["gland"], terms["size"], terms["rec"], weights)
    return {k: v for k, v in terms.items() if v is not None}


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def checkpoint_tensors(model: SSMTNet, state: Optional[TrainState] = None,
                       weights: Optional[LossWeights] = None) -> dict[str, np.ndarray]:
    tensors = dict(model.state_dict())
    tensors[ckpt.CONFIG_KEY] = ckpt.pack_json(model.config.to_dict())
    if state is not None:
        tensors[STATE_KEY] = ckpt.pack_json(state.counters())
        if state.optimizer is not None:
            tensors.update(state.optimizer.state_arrays())
    if weights is not None:
        tensors[WEIGHTS_KEY] = ckpt.pack_json(weights.to_dict())
    return tensors


def save_checkpoint(path, model: SSMTNet, state: Optional[TrainState] = None,
                    weights: Optional[LossWeights] = None) -> None:
    ckpt.save(path, checkpoint_tensors(model, state, weights))


def load_model(path_or_tensors, seed: int = 42) -> SSMTNet:
    """Rebuild a model from a checkpoint (config is stored inside it)."""
    from ..model import ModelConfig

    tensors = path_or_tensors if isinstance(path_or_tensors, dict) else ckpt.load(path_or_tensors)
    if ckpt.CONFIG_KEY not in tensors:
        raise ckpt.CorruptCheckpointError("checkpoint has no model config")
    model = SSMTNet(ModelConfig.from_dict(ckpt.unpack_json(tensors[ckpt.CONFIG_KEY])), seed=seed)
    model.load_state_dict({k: v for k, v in tensors.items()
                           if not k.startswith("__") and not k.startswith("adam.")})
    return model


def _restore(state: TrainState, model: SSMTNet, tensors: dict) -> None:
    model.load_state_dict({k: v for k, v in tensors.items()
                           if not k.startswith("__") and not k.startswith("adam.")})
    if STATE_KEY in tensors:
        c = ckpt.unpack_json(tensors[STATE_KEY])
        if c["phase"] != state.phase:
            raise ConfigError(f"cannot resume {state.phase} from a {c['phase']} checkpoint")
        state.epoch, state.step, state.best_val_dsc = c["epoch"], c["step"], c["best_val_dsc"]
    if state.optimizer is not None and any(k.startswith("adam.") for k in tensors):
        state.optimizer.load_state_arrays(tensors)


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".9g")


class MetricsLog:
    """Append-only CSV, one row per epoch."""

    def __init__(self, path: Optional[Union[str, Path]], fresh: bool):
        self.path = Path(path) if path else None
        if self.path is not None and (fresh or not self.path.exists()):
            self.path.write_text(",".join(CSV_HEADER) + "\n")

    def append(self, row: dict) -> None:
        if self.path is None:
            return
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(
            [row["epoch"], row["step"]] + [_fmt(row.get(k)) for k in CSV_HEADER[2:]])
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(buf.getvalue())


# ----------------------------------------------------------------------------
# phases
# ----------------------------------------------------------------------------

def validate(model: SSMTNet, samples: Sequence[UltrasoundSample], batch_size: int = 8) -> tuple[float, float]:
    """Mean nodule IoU and DSC over labeled samples (binarized at 0.5)."""
    labeled = [s for s in samples if s.nodule_mask is not None]
    if not labeled:
        return float("nan"), float("nan")
    pred = predict_masks(model, [s.image for s in labeled], batch_size, branches=("nodule",))["nodule"]
    ious = [iou(p, s.nodule_mask) for p, s in zip(pred, labeled)]
    dscs = [dsc(p, s.nodule_mask) for p, s in zip(pred, labeled)]
    return float(np.mean(ious)), float(np.mean(dscs))


def _run(model: SSMTNet, samples: list[UltrasoundSample], config: PhaseConfig, params,
         step_losses, state: TrainState, val_samples: Optional[list[UltrasoundSample]],
         weights: Optional[LossWeights], resume: Optional[Union[str, Path]]) -> TrainState:
    if not samples:
        raise DatasetError(f"{config.phase}: no training samples")
    state.optimizer = Adam(params, weight_decay=config.weight_decay)
    if resume is not None:
        _restore(state, model, ckpt.load(resume))
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics = MetricsLog(out_dir / f"metrics_{config.phase}.csv" if out_dir else None, fresh=resume is None)
    total = config.total_steps(len(samples))

    for epoch in range(state.epoch, config.epochs):
        if state.step >= total:
            break
        sums: dict[str, float] = {}
        count = 0
        lr = cosine_lr(state.step, total, config.lr0, config.lr_min)
        for batch in iter_batches(samples, config.batch_size, config.seed, epoch, config.augmentation):
            if state.step >= total:
                break
            lr = cosine_lr(state.step, total, config.lr0, config.lr_min)
            state.optimizer.zero_grad()
            losses = step_losses(batch)
            backward(losses["total"])
            state.optimizer.step(lr)
            state.step += 1
            record = {k: float(v.item()) for k, v in losses.items()}
            state.history.append(dict(record, step=state.step, lr=lr))
            for k, v in record.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
        state.epoch = epoch + 1
        row = {"epoch": state.epoch, "step": state.step, "lr": lr,
               **{f"loss_{k}": v / count for k, v in sums.items()}}
        last_epoch = state.step >= total or state.epoch == config.epochs
        if val_samples and (state.epoch % config.eval_every == 0 or last_epoch):
            row["val_iou"], row["val_dsc"] = validate(model, val_samples)
            if row["val_dsc"] > state.best_val_dsc:
                state.best_val_dsc = row["val_dsc"]
                if out_dir is not None:
                    save_checkpoint(out_dir / f"best_{config.phase}.ckpt", model, state, weights)
        metrics.append(row)
        log.info("%s epoch %d step %d loss %.5f", config.phase, state.epoch, state.step, row["loss_total"])
        due = config.checkpoint_every and state.epoch % config.checkpoint_every == 0
        if out_dir is not None and (due or last_epoch):
            save_checkpoint(out_dir / f"last_{config.phase}.ckpt", model, state, weights)
    return state


def run_pretrain(model: SSMTNet, data, config: PhaseConfig,
                 resume: Optional[Union[str, Path]] = None) -> TrainState:
    """Train encoder + reconstruction decoder on images alone.

    Masks are ignored and only the encoder and reconstruction parameters
    are handed to the optimizer; every other parameter keeps its exact
    initial bits.
    """
    if config.phase != "pretrain":
        raise ConfigError(f"run_pretrain needs a pretrain PhaseConfig, got {config.phase!r}")
    samples = [s.unlabeled() for s in _as_samples(data, model.config.image_size, with_masks=False)]
    state = TrainState(phase="pretrain", seed=config.seed)
    params = model.group_parameters(PRETRAIN_GROUPS)
    return _run(model, samples, config, params, lambda b: pretrain_losses(model, b), state,
                None, None, resume)


def supervised_groups(flags: AblationFlags) -> tuple[str, ...]:
    """Parameter groups the supervised optimizer owns for ``flags``.

    Disabled branches are left out entirely, so not even weight decay
    touches them.
    """
    groups = ["encoder", "nodule_decoder"]
    if flags.gland:
        groups.append("gland_decoder")
    if flags.size:
        groups.append("size_head")
    if flags.rec:
        groups.append("reconstruction")
    return tuple(groups)


def run_supervised(model: SSMTNet, data, config: PhaseConfig,
                   weights: Optional[LossWeights] = None, flags: Optional[AblationFlags] = None,
                   val_data=None, resume: Optional[Union[str, Path]] = None) -> TrainState:
    """Jointly optimize nodule segmentation and the enabled auxiliary tasks.

    Disabled branches get weight zero, the remaining weights are rescaled to
    sum to one, and the disabled branches' parameters stay out of the
    optimizer. Every sample must carry a nodule mask.
    """
    if config.phase != "supervised":
        raise ConfigError(f"run_supervised needs a supervised PhaseConfig, got {config.phase!r}")
    flags = flags or AblationFlags()
    weights = (weights or LossWeights()).renormalized(gland=flags.gland, size=flags.size, rec=flags.rec)
    size = model.config.image_size
    samples = require_labeled(_as_samples(data, size, with_masks=True))
    val = _as_samples(val_data, size, with_masks=True) if val_data is not None else None
    state = TrainState(phase="supervised", seed=config.seed)
    params = model.group_parameters(supervised_groups(flags))
    return _run(model, samples, config, params,
                lambda b: supervised_losses(model, b, weights, flags), state, val, weights, resume)


def config_summary(config: PhaseConfig) -> dict:
    d = asdict(config)
    if config.augmentation is not None:
        d["augmentation"] = asdict(config.augmentation)
    return d
