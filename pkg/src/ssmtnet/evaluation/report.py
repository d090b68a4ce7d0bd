"""Dataset-level evaluation with mean ± std aggregation."""

from __future__ import annotations

import io
import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ..data import DatasetManifest, UltrasoundSample, load_samples
from ..model import SSMTNet
from .metrics import dsc_from_counts, iou_from_counts, overlap_counts
from .predict import predict_masks

log = logging.getLogger(__name__)

AGGREGATIONS = ("seeds", "images")


@dataclass
class MetricReport:
    """Per-image scores for every seed plus the aggregated summary.

    ``per_image[seed]`` is a list of ``(stem, iou, dsc)`` in manifest order.
    With ``aggregate='seeds'`` the spread is the population std of the
    per-seed dataset means; with ``'images'`` it is the population std over
    all per-image scores pooled across seeds.
    """

    seeds: list[int]
    per_image: dict[int, list[tuple[str, float, float]]] = field(default_factory=dict)
    skipped: int = 0
    aggregate: str = "seeds"

    def _values(self, idx: int) -> tuple[float, float]:
        if self.aggregate == "seeds":
            vals = [np.mean([r[idx] for r in self.per_image[s]]) for s in self.seeds if self.per_image[s]]
        else:
            vals = [r[idx] for s in self.seeds for r in self.per_image[s]]
        if not vals:
            return float("nan"), float("nan")
        arr = np.asarray(vals, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    @property
    def iou(self) -> tuple[float, float]:
        return self._values(1)

    @property
    def dsc(self) -> tuple[float, float]:
        return self._values(2)

    def seed_means(self) -> dict[int, tuple[float, float]]:
        return {s: (float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows])))
                for s, rows in self.per_image.items() if rows}

    @staticmethod
    def percent(mean_std: tuple[float, float]) -> str:
        m, s = mean_std
        return f"{100 * m:.2f} ± {100 * s:.2f}"

    def summary(self) -> str:
        return f"IoU {self.percent(self.iou)}  DSC {self.percent(self.dsc)}"

    def to_csv(self) -> str:
        """``metric,mean,std,n_seeds,n_images`` rows, values in percent."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n_seeds", "n_images", "skipped"])
        n_img = len(next(iter(self.per_image.values()), []))
        for name, (m, s) in (("iou", self.iou), ("dsc", self.dsc)):
            w.writerow([name, f"{100 * m:.2f}", f"{100 * s:.2f}", len(self.seeds), n_img, self.skipped])
        return buf.getvalue()


def score_masks(stems: Sequence[str], preds: Sequence[np.ndarray],
                gts: Sequence[np.ndarray]) -> list[tuple[str, float, float]]:
    rows = []
    for stem, p, g in zip(stems, preds, gts):
        c = overlap_counts(p, g)
        rows.append((stem, iou_from_counts(c), dsc_from_counts(c)))
    return rows


ModelSource = Union[SSMTNet, str]


def evaluate(models: Union[ModelSource, Mapping[int, ModelSource]],
             data: Union[DatasetManifest, Sequence[UltrasoundSample]],
             seeds: Optional[Sequence[int]] = None, aggregate: str = "seeds",
             batch_size: int = 8) -> MetricReport:
    """Score nodule predictions against ground truth.

    Parameters
    ----------
    models : model, checkpoint path, or mapping seed -> model/path
        One trained network per seed. A single model is reused for every
        entry of ``seeds`` (giving zero spread across seeds).
    data : manifest or samples
        Samples without a nodule mask are skipped and counted.
    seeds : list of int, optional
        Defaults to the mapping's keys, or ``[42]``.
    aggregate : {'seeds', 'images'}
        What the reported standard deviation runs over.
    """
    from ..training.loop import load_model

    if aggregate not in AGGREGATIONS:
        raise ValueError(f"aggregate must be one of {AGGREGATIONS}, got {aggregate!r}")
    if isinstance(models, Mapping):
        seeds = list(seeds) if seeds is not None else sorted(models)
        sources = {s: models[s] for s in seeds}
    else:
        seeds = list(seeds) if seeds is not None else [42]
        sources = {s: models for s in seeds}

    cache: dict[int, SSMTNet] = {}

    def resolve(src) -> SSMTNet:
        if isinstance(src, SSMTNet):
            return src
        key = id(src)
        if key not in cache:
            cache[key] = load_model(src)
        return cache[key]

    first = resolve(next(iter(sources.values())))
    if isinstance(data, DatasetManifest):
        samples = load_samples(data, first.config.image_size)
    else:
        samples = list(data)
    labeled = [s for s in samples if s.nodule_mask is not None]
    skipped = len(samples) - len(labeled)
    if skipped:
        log.warning("evaluate: %d sample(s) without a nodule mask were skipped", skipped)

    report = MetricReport(seeds=seeds, skipped=skipped, aggregate=aggregate)
    for seed in seeds:
        model = resolve(sources[seed])
        preds = predict_masks(model, [s.image for s in labeled], batch_size, branches=("nodule",))["nodule"]
        report.per_image[seed] = score_masks([s.stem for s in labeled], preds,
                                             [s.nodule_mask for s in labeled])
    return report
