"""Directory-layout ingestion and manifests.

Layout::

    <root>/image/<stem>.pgm|png
    <root>/mask_nodule/<stem>.pgm|png   (optional per stem)
    <root>/mask_gland/<stem>.pgm|png    (optional per stem)

Records are sorted by stem. Images without a nodule mask are tagged
``unlabeled``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from ..errors import DatasetError, ManifestError
from .netpbm import read_pgm_u8, write_pgm
from .sample import UltrasoundSample
from .transforms import normalize_resize

IMAGE_DIR, NODULE_DIR, GLAND_DIR = "image", "mask_nodule", "mask_gland"
EXTENSIONS = (".pgm", ".png")
SPLITS = ("train", "test", "unlabeled")


@dataclass
class ManifestRecord:
    stem: str
    image: str
    nodule_mask: Optional[str] = None
    gland_mask: Optional[str] = None
    split: str = "train"


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_split(self, *splits: str) -> "DatasetManifest":
        return DatasetManifest([r for r in self.records if r.split in splits])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "DatasetManifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    records.append(ManifestRecord(**json.loads(line)))
        return cls(records)


def _index(directory: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    if not directory.is_dir():
        return found
    for entry in sorted(directory.iterdir()):
        if entry.suffix.lower() not in EXTENSIONS or not entry.is_file():
            continue
        if entry.stem in found:
            raise ManifestError(f"duplicate stem {entry.stem!r} in {directory}")
        found[entry.stem] = entry
    return found


def load_dataset(root_dir: Union[str, os.PathLike], split: str = "train") -> DatasetManifest:
    """Scan ``root_dir`` and build a manifest; labeled records get ``split``."""
    root = Path(root_dir)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} is not a directory")
    if split not in SPLITS:
        raise ManifestError(f"unknown split {split!r}")
    images = _index(root / IMAGE_DIR)
    nodules = _index(root / NODULE_DIR)
    glands = _index(root / GLAND_DIR)
    for kind, masks in (("nodule", nodules), ("gland", glands)):
        orphans = sorted(set(masks) - set(images))
        if orphans:
            raise ManifestError(f"{kind} mask(s) without image: {', '.join(orphans[:5])}")
    records = []
    for stem in sorted(images):
        nod = nodules.get(stem)
        gl = glands.get(stem)
        if nod is None:
            records.append(ManifestRecord(stem, str(images[stem]), split="unlabeled"))
        else:
            records.append(ManifestRecord(stem, str(images[stem]), str(nod),
                                          str(gl) if gl else None, split))
    return DatasetManifest(records)


def read_image_u8(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("L"), dtype=np.uint8).copy()
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc}") from exc
    return read_pgm_u8(path)


def load_sample(record: ManifestRecord, size: Optional[tuple[int, int]] = None,
                with_masks: bool = True) -> UltrasoundSample:
    raw = read_image_u8(record.image).astype(np.float32)
    h, w = size if size is not None else raw.shape
    image = normalize_resize(raw, h, w)

    def mask(path):
        if path is None or not with_masks:
            return None
        return normalize_resize((read_image_u8(path) >= 128).astype(np.float32), h, w, mask=True)

    return UltrasoundSample(image=image, nodule_mask=mask(record.nodule_mask),
                            gland_mask=mask(record.gland_mask), stem=record.stem)


def load_samples(manifest: Iterable[ManifestRecord], size: Optional[tuple[int, int]] = None,
                 with_masks: bool = True) -> list[UltrasoundSample]:
    return [load_sample(r, size, with_masks) for r in manifest]


def require_labeled(samples: Iterable[UltrasoundSample]) -> list[UltrasoundSample]:
    samples = list(samples)
    missing = [s.stem for s in samples if s.nodule_mask is None]
    if missing:
        raise DatasetError(f"supervised training needs nodule masks; missing for {missing[:5]}")
    return samples


def stem_bucket(stem: str) -> int:
    return int.from_bytes(hashlib.sha256(stem.encode("utf-8")).digest()[:4], "little") % 100


def split_by_stem_hash(items: list, val_percent: int = 20, key=lambda x: x.stem) -> tuple[list, list]:
    """Deterministic train/validation split: a stem's hash decides its side."""
    train, val = [], []
    for item in items:
        (val if stem_bucket(key(item)) < val_percent else train).append(item)
    return train, val


def write_dataset(root: Union[str, os.PathLike], samples: Iterable[UltrasoundSample]) -> DatasetManifest:
    """Write samples in the directory layout and return the resulting manifest."""
    root = Path(root)
    for d in (IMAGE_DIR, NODULE_DIR, GLAND_DIR):
        (root / d).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_pgm(root / IMAGE_DIR / f"{s.stem}.pgm", s.image)
        if s.nodule_mask is not None:
            write_pgm(root / NODULE_DIR / f"{s.stem}.pgm", s.nodule_mask, mask=True)
        if s.gland_mask is not None:
            write_pgm(root / GLAND_DIR / f"{s.stem}.pgm", s.gland_mask, mask=True)
    manifest = load_dataset(root)
    manifest.to_jsonl(root / "manifest.jsonl")
    return manifest
