"""Layers shared by every model component.

Initialisation conventions: Glorot-uniform weight matrices, zero biases,
normal(0, 0.02) embedding and positional tables.  All randomness flows
through explicitly passed generators so models rebuild identically from a
seed.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import NEG_MASK_VALUE, Parameter, Tensor

ACTIVATIONS = {
    None: lambda t: t,
    "relu": T.relu,
    "gelu": T.gelu,
    "sigmoid": T.sigmoid,
}


def apply_activation(t: Tensor, activation: str | None) -> Tensor:
    try:
        return ACTIVATIONS[activation](t)
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out)).astype(dtype)


class Module:
    """Base for anything owning parameters or submodules.

    Walks instance attributes in definition order, so parameter enumeration
    is deterministic.  Parameters are confined to one training context; the
    walk also bakes hierarchical names onto the parameters it visits.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if isinstance(value, Parameter):
                value.name = f"{prefix}{attr}"
                yield value.name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{prefix}{attr}{i}"
                        yield item.name, item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_training(self, flag: bool) -> None:
        for attr, value in vars(self).items():
            if isinstance(value, Module):
                value.set_training(flag)
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.set_training(flag)
        if hasattr(self, "training"):
            self.training = flag


def dense(x: Tensor, weight: Tensor, bias: Tensor | None, activation: str | None = None) -> Tensor:
    """y = act(x @ W + b) over the last axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"dense: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return apply_activation(out, activation)


class Dense(Module):
    def __init__(
        self,
        d_in: int,
        d_out: int,
        *,
        activation: str | None = None,
        bias: bool = True,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.weight = Parameter(glorot_uniform(rng, d_in, d_out, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias, self.activation)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / T.sqrt(var + eps)
    return normed * gain + bias


class LayerNorm(Module):
    def __init__(self, dim: int, *, eps: float = 1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    """Lookup table mapping integer levels to learned vectors."""

    def __init__(self, levels: int, dim: int, *, rng: np.random.Generator, dtype=np.float32):
        self.table = Parameter(rng.normal(0.0, 0.02, size=(levels, dim)).astype(dtype))

    def __call__(self, indices: np.ndarray) -> Tensor:
        return T.embedding_lookup(self.table, indices)


class Dropout(Module):
    """Inverted dropout; identity at rate 0 and in inference mode."""

    def __init__(self, rate: float, *, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * Tensor(mask)


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """Additive mask hiding key positions to the right of each query."""
    mask = np.triu(np.full((t, t), NEG_MASK_VALUE, dtype=dtype), k=1)
    return mask


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention with head splitting.

    Decoder-style (causal=True) attention considers key positions at or
    before each query only; encoder-style attention is bidirectional.
    """

    def __init__(
        self,
        d_model: int,
        heads: int,
        *,
        causal: bool,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.causal = causal
        self.dtype = dtype
        self.query = Dense(d_model, d_model, rng=rng, dtype=dtype)
        self.key = Dense(d_model, d_model, rng=rng, dtype=dtype)
        self.value = Dense(d_model, d_model, rng=rng, dtype=dtype)
        self.out = Dense(d_model, d_model, rng=rng, dtype=dtype)

    def _split(self, t: Tensor, batch: int, length: int) -> Tensor:
        return t.reshape(batch, length, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        q = self._split(self.query(x), batch, length)
        k = self._split(self.key(x), batch, length)
        v = self._split(self.value(x), batch, length)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        if self.causal:
            scores = scores + Tensor(causal_mask(length, dtype=self.dtype))
        weights = T.softmax(scores, axis=-1)
        mixed = weights @ v
        merged = mixed.transpose(0, 2, 1, 3).reshape(batch, length, self.d_model)
        return self.out(merged)
