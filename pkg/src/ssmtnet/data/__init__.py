"""Dataset ingestion, preprocessing, augmentation and synthetic phantoms."""

from .dataset import (
    DatasetManifest, ManifestRecord, load_dataset, load_sample, load_samples,
    require_labeled, split_by_stem_hash, write_dataset,
)
from .netpbm import read_pgm, read_pgm_u8, read_ppm, write_pgm, write_ppm
from .phantom import PhantomConfig, generate_phantom, phantom_set
from .sample import UltrasoundSample, binarize, compute_size_label
from .transforms import AugmentationConfig, augment, hflip, minmax_normalize, normalize_resize, rotate, stitch, zoom_out

__all__ = [
    "DatasetManifest", "ManifestRecord", "load_dataset", "load_sample", "load_samples",
    "require_labeled", "split_by_stem_hash", "write_dataset", "read_pgm", "read_pgm_u8",
    "read_ppm", "write_pgm", "write_ppm", "PhantomConfig", "generate_phantom", "phantom_set",
    "UltrasoundSample", "binarize", "compute_size_label", "AugmentationConfig", "augment",
    "hflip", "minmax_normalize", "normalize_resize", "rotate", "stitch", "zoom_out",
]
