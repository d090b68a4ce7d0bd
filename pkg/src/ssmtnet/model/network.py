"""The full multi-task network."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..autodiff import Tensor, ops
from .config import ModelConfig
from .decoder import DecoderOutput, SegmentationDecoder
from .encoder import Encoder, EncoderOutput
from .heads import ReconstructionDecoder, SizeHead
from .nn import Module

BRANCHES = ("nodule", "gland", "size", "rec")
GROUPS = ("encoder", "reconstruction", "nodule_decoder", "gland_decoder", "size_head")


@dataclass
class ModelOutput:
    encoder: EncoderOutput
    nodule: Optional[DecoderOutput] = None
    gland: Optional[DecoderOutput] = None
    size: Optional[Tensor] = None          # N, in (0, 1)
    reconstruction: Optional[Tensor] = None  # N×C×H×W
    extras: dict = field(default_factory=dict)


class SSMTNet(Module):
    """Encoder, nodule and gland decoders, size head and reconstruction decoder.

    All parameters are drawn from one generator seeded with ``seed`` in a
    fixed order, so two instances with the same config and seed are
    bit-identical.
    """

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 42):
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(self.config, rng)
        self.reconstruction = ReconstructionDecoder(self.config, rng)
        self.nodule_decoder = SegmentationDecoder(self.config, rng)
        self.gland_decoder = SegmentationDecoder(self.config, rng)
        self.size_head = SizeHead(self.config.embed_dim, rng)

    def group_parameters(self, groups: Iterable[str]) -> list[tuple[str, Tensor]]:
        groups = tuple(groups)
        return [(n, p) for n, p in self.named_parameters() if n.split(".", 1)[0] in groups]

    def as_input(self, images) -> Tensor:
        """Accept ``H×W``, ``N×H×W`` or ``N×C×H×W`` arrays/tensors."""
        if isinstance(images, Tensor):
            return images
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None, None]
        elif arr.ndim == 3:
            arr = arr[:, None]
        return Tensor(arr)

    def forward(self, images, branches: Sequence[str] = BRANCHES, class_mode: str = "soft",
                frozen_masks: Optional[dict] = None) -> ModelOutput:
        """Run the encoder and the requested branches.

        ``class_mode='soft'`` weights each query's mask by its foreground
        class probability (differentiable, used for training); ``'hard'``
        keeps only queries whose argmax class is foreground. ``frozen_masks``
        maps decoder name to a list of Z_t arrays to use instead of
        thresholding (finite-difference checks).
        """
        x = self.as_input(images)
        enc = self.encoder(x)
        out = ModelOutput(encoder=enc)
        frozen_masks = frozen_masks or {}
        if "nodule" in branches:
            out.nodule = self.nodule_decoder(enc, x, class_mode, frozen_masks.get("nodule"))
        if "gland" in branches:
            out.gland = self.gland_decoder(enc, x, class_mode, frozen_masks.get("gland"))
        if "size" in branches:
            out.size = self.size_head(enc.pooled)
        if "rec" in branches:
            out.reconstruction = self.reconstruction(enc.cnn_skips[-1], enc.transformer_map)
        return out

    __call__ = forward
