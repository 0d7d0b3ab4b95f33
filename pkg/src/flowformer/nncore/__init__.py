"""Minimal differentiable-computation core backing all model components.

Reverse-mode autodiff over numpy arrays: float32 by default, with float64
available for gradient-check headroom.  Exposes the tensor type, the layers
the model zoo needs (dense, layer norm, embedding lookup, multi-head
attention, dropout), the Adam optimizer, and binary checkpoints.
"""

from .tensor import Tensor, Parameter, concat, softmax
from .layers import (
    Module,
    Dense,
    LayerNorm,
    Embedding,
    Dropout,
    MultiHeadAttention,
    dense,
    layer_norm,
    glorot_uniform,
)
from .optim import Adam
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tensor",
    "Parameter",
    "concat",
    "softmax",
    "Module",
    "Dense",
    "LayerNorm",
    "Embedding",
    "Dropout",
    "MultiHeadAttention",
    "dense",
    "layer_norm",
    "glorot_uniform",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]
