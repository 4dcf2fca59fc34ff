"""Minimal float64 autodiff, layers, optimizer and checkpoints."""

from . import tensor
from .layers import (
    CausalSelfAttention,
    Dense,
    LayerNorm,
    Mlp,
    Module,
    TransformerBlock,
    causal_attention,
    forward_dense,
    gelu,
    glorot_uniform,
    layer_norm,
    masked_max,
    mse,
    softmax,
)
from .store import (
    ParamStore,
    clip_by_global_norm,
    global_norm,
    grad_dict,
    load_checkpoint,
    opt_step,
    save_checkpoint,
)
from .tensor import Tensor, as_tensor, enable_grad, grad, no_grad, parameter

__all__ = [
    "CausalSelfAttention",
    "Dense",
    "LayerNorm",
    "Mlp",
    "Module",
    "ParamStore",
    "Tensor",
    "TransformerBlock",
    "as_tensor",
    "causal_attention",
    "clip_by_global_norm",
    "enable_grad",
    "forward_dense",
    "gelu",
    "global_norm",
    "glorot_uniform",
    "grad",
    "grad_dict",
    "layer_norm",
    "load_checkpoint",
    "masked_max",
    "mse",
    "no_grad",
    "opt_step",
    "parameter",
    "save_checkpoint",
    "softmax",
    "tensor",
]
