"""Run configuration: one JSON document with model, data, train and ablation sections.

Example::

    {
      "model": {"image_size": [64, 64], "embed_dim": 32},
      "data": {"root": null, "num_phantoms": 64, "val_percent": 20,
               "phantom": {"speckle_variance": 0.01}, "augmentation": null},
      "train": {"seed": 42, "out_dir": "runs/demo",
                "weights": {"alpha": 0.8, "beta": 0.1, "gamma": 0.05, "eta": 0.05},
                "pretrain": {"epochs": 25, "batch_size": 8},
                "supervised": {"epochs": 60, "batch_size": 8}},
      "ablation": {"variant": 5}
    }

Every section is optional; unknown keys anywhere are rejected, and the loss
weights are validated while parsing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .data import AugmentationConfig, PhantomConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import AblationFlags, LossWeights, PhaseConfig

SECTIONS = ("model", "data", "train", "ablation")
PHASE_KEYS = ("epochs", "batch_size", "lr0", "lr_min", "weight_decay", "max_steps",
              "eval_every", "checkpoint_every")


def _check_keys(d: Any, allowed, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return d


def _build(cls, d: dict, where: str):
    _check_keys(d, [f.name for f in fields(cls)], where)
    try:
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class DataSection:
    root: Optional[str] = None               # dataset directory; None -> phantoms
    num_phantoms: int = 64
    val_percent: int = 20
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    augmentation: Optional[AugmentationConfig] = None


@dataclass
class TrainSection:
    seed: int = 42
    out_dir: str = "runs/ssmt"
    weights: LossWeights = field(default_factory=LossWeights)
    pretrain: dict = field(default_factory=dict)
    supervised: dict = field(default_factory=dict)

    def phase(self, name: str, seed: Optional[int] = None, out_dir: Optional[str] = None,
              augmentation: Optional[AugmentationConfig] = None) -> PhaseConfig:
        raw = dict(self.pretrain if name == "pretrain" else self.supervised)
        return PhaseConfig(phase=name, seed=self.seed if seed is None else seed,
                           out_dir=out_dir or self.out_dir, augmentation=augmentation, **raw)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationFlags = field(default_factory=AblationFlags)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        _check_keys(doc, SECTIONS, "config")
        model = _build(ModelConfig, doc.get("model", {}), "model")

        data_doc = dict(_check_keys(doc.get("data", {}), [f.name for f in fields(DataSection)], "data"))
        phantom = _build(PhantomConfig, data_doc.pop("phantom", {}) or {}, "data.phantom")
        aug_doc = data_doc.pop("augmentation", None)
        aug = _build(AugmentationConfig, aug_doc, "data.augmentation") if aug_doc is not None else None
        data = DataSection(phantom=phantom, augmentation=aug, **data_doc)
        if data.num_phantoms < 1 or not 0 <= data.val_percent < 100:
            raise ConfigError("data.num_phantoms must be >= 1 and val_percent in [0, 100)")

        train_doc = dict(_check_keys(doc.get("train", {}), [f.name for f in fields(TrainSection)], "train"))
        weights = _build(LossWeights, train_doc.pop("weights", {}) or {}, "train.weights")
        for phase in ("pretrain", "supervised"):
            _check_keys(train_doc.get(phase, {}), PHASE_KEYS, f"train.{phase}")
        train = TrainSection(weights=weights, **train_doc)
        for phase in ("pretrain", "supervised"):
            train.phase(phase)  # validate eagerly

        abl = doc.get("ablation", {}) or {}
        _check_keys(abl, ("variant", "rec", "gland", "size"), "ablation")
        if "variant" in abl:
            if len(abl) > 1:
                raise ConfigError("ablation: give either 'variant' or individual flags, not both")
            ablation = AblationFlags.variant(abl["variant"])
        else:
            ablation = _build(AblationFlags, abl, "ablation")
        return cls(model=model, data=data, train=train, ablation=ablation)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)
