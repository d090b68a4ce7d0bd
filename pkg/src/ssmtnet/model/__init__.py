"""Network definition: hybrid encoder, dual query decoders and auxiliary heads."""

from .config import ModelConfig
from .decoder import (
    DecoderOutput, DecoderTrace, assemble_segmentation, attention_bias, classify, cross_attention,
    initial_mask, project_features, refine_mask, refine_queries,
)
from .encoder import Encoder, EncoderOutput, embed, patchify, tokens_to_map, unpatchify
from .heads import ReconstructionDecoder, SizeHead
from .network import BRANCHES, GROUPS, ModelOutput, SSMTNet
from .nn import Module, parameter_hash

__all__ = [
    "ModelConfig", "DecoderOutput", "DecoderTrace", "assemble_segmentation", "attention_bias",
    "classify", "cross_attention", "initial_mask", "project_features", "refine_mask",
    "refine_queries", "Encoder", "EncoderOutput", "embed", "patchify", "tokens_to_map",
    "unpatchify", "ReconstructionDecoder", "SizeHead", "BRANCHES", "GROUPS", "ModelOutput",
    "SSMTNet", "Module", "parameter_hash",
]
