"""Losses, checkpoints and the two-phase training schedule."""

from .checkpoint import CONFIG_KEY, decode, encode, fnv1a64, load, save
from .losses import LossWeights, charbonnier, dice_loss, size_loss, total_loss
from .loop import (
    CSV_HEADER, PRETRAIN_GROUPS, VARIANTS, AblationFlags, PhaseConfig, TrainState,
    iter_batches, load_model, run_pretrain, run_supervised, save_checkpoint, supervised_groups, supervised_losses,
    pretrain_losses, validate,
)

__all__ = [
    "CONFIG_KEY", "decode", "encode", "fnv1a64", "load", "save", "LossWeights", "charbonnier",
    "dice_loss", "size_loss", "total_loss", "CSV_HEADER", "PRETRAIN_GROUPS", "VARIANTS",
    "AblationFlags", "PhaseConfig", "TrainState", "iter_batches", "load_model", "run_pretrain",
    "run_supervised", "save_checkpoint", "supervised_groups", "supervised_losses", "pretrain_losses", "validate",
]
