"""Small transformer encoder with guided-attention MLM losses."""

from .backend import BACKEND, select_backend
from .config import GuidanceSpec, ModelConfig
from .encoder import (
    ForwardTrace,
    backward,
    forward,
    guidance_loss,
    mlm_loss,
    total_loss,
)
from .params import (
    check_finite,
    init_params,
    load_checkpoint,
    n_params,
    save_checkpoint,
    vocab_fingerprint,
)

__all__ = [
    "BACKEND",
    "select_backend",
    "ModelConfig",
    "GuidanceSpec",
    "ForwardTrace",
    "forward",
    "backward",
    "mlm_loss",
    "guidance_loss",
    "total_loss",
    "init_params",
    "n_params",
    "check_finite",
    "save_checkpoint",
    "load_checkpoint",
    "vocab_fingerprint",
]
