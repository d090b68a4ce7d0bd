"""Single-image inference with mask and overlay export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..data import normalize_resize, write_pgm, write_ppm
from ..data.dataset import read_image_u8
from ..interp import resize_array
from ..model import SSMTNet
from .predict import predict_masks


@dataclass
class InferenceResult:
    nodule_mask: np.ndarray   # H×W uint8 at the input's resolution
    gland_mask: np.ndarray
    overlay: np.ndarray       # H×W×3 uint8
    paths: dict[str, Path]


def overlay_rgb(image_u8: np.ndarray, pred: Optional[np.ndarray] = None,
                gt: Optional[np.ndarray] = None) -> np.ndarray:
    """Grayscale image with prediction pixels in red and ground truth in green.

    Where both are set the pixel is yellow. With neither, the output is the
    grayscale image replicated into three channels.
    """
    rgb = np.repeat(np.asarray(image_u8, dtype=np.uint8)[..., None], 3, axis=2)
    if pred is not None:
        rgb[np.asarray(pred).astype(bool), 0] = 255
    if gt is not None:
        rgb[np.asarray(gt).astype(bool), 1] = 255
    return rgb


def _to_input_size(mask: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if mask.shape == shape:
        return mask
    return (resize_array(mask.astype(np.float32), shape[0], shape[1], "nearest") > 0.5).astype(np.uint8)


def infer(model: Union[SSMTNet, str, Path], image_path: Union[str, Path], out_dir: Union[str, Path],
          gt_path: Optional[Union[str, Path]] = None) -> InferenceResult:
    """Predict nodule and gland masks for one image and write them out.

    Writes ``<stem>_nodule.pgm``, ``<stem>_gland.pgm`` and
    ``<stem>_overlay.ppm`` at the input image's resolution. A checkpoint
    path is loaded (and its checksum verified) first.
    """
    from ..training.loop import load_model

    if not isinstance(model, SSMTNet):
        model = load_model(model)
    image_path = Path(image_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = read_image_u8(image_path)
    h, w = model.config.image_size
    x = normalize_resize(raw.astype(np.float32), h, w)
    masks = predict_masks(model, [x], batch_size=1, branches=("nodule", "gland"))
    nodule = _to_input_size(masks["nodule"][0], raw.shape)
    gland = _to_input_size(masks["gland"][0], raw.shape)
    gt = None
    if gt_path is not None:
        gt = read_image_u8(gt_path) >= 128
        if gt.shape != raw.shape:
            gt = _to_input_size(gt.astype(np.uint8), raw.shape).astype(bool)
    rgb = overlay_rgb(raw, nodule, gt)
    stem = image_path.stem
    paths = {"nodule": out / f"{stem}_nodule.pgm", "gland": out / f"{stem}_gland.pgm",
             "overlay": out / f"{stem}_overlay.ppm"}
    write_pgm(paths["nodule"], nodule, mask=True)
    write_pgm(paths["gland"], gland, mask=True)
    write_ppm(paths["overlay"], rgb)
    return InferenceResult(nodule, gland, rgb, paths)
