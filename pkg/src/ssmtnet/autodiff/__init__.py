"""Dense f32 tensors with reverse-mode differentiation, Adam and cosine LR."""

from . import ops
from .gradcheck import GradCheckResult, gradcheck, relative_error
from .optim import Adam, AdamState, adam_step, cosine_lr
from .tensor import DTYPE, Tape, Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "DTYPE", "Tape", "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad", "ops",
    "Adam", "AdamState", "adam_step", "cosine_lr", "GradCheckResult", "gradcheck",
    "relative_error",
]
