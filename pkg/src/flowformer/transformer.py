"""Transformer stacks: pre-norm residual blocks with learned or sinusoidal positions.

Decoder blocks use causal attention (each position sees itself and earlier
positions only); encoder blocks are bidirectional.  The stack applies its
blocks sequentially and finishes with one layer norm.  Named presets cover
the shallow two-block models and the two deep twelve-block shapes; deep
presets accept d_model/ff_dim overrides so structural tests stay desk-scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import nncore
from .nncore import Tensor


class TransformerError(ValueError):
    pass


class BlockKind(enum.Enum):
    ENCODER = "encoder"
    DECODER = "decoder"


class PositionalMode(enum.Enum):
    LEARNED = "learned"
    SINUSOIDAL = "sinusoidal"
    NONE = "none"


@dataclass(frozen=True)
class TransformerConfig:
    block: BlockKind
    layers: int
    d_model: int | None
    heads: int
    ff_dim: int
    dropout: float = 0.0
    positional: PositionalMode = PositionalMode.LEARNED

    def resolved(self, d_model: int) -> "TransformerConfig":
        return replace(self, d_model=d_model)

    def validate(self) -> None:
        if self.d_model is None:
            raise TransformerError("d_model unresolved; bind the encoder width first")
        if self.layers < 0 or self.heads <= 0 or self.ff_dim <= 0:
            raise TransformerError(f"invalid transformer config {self}")
        if self.d_model % self.heads != 0:
            raise TransformerError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )


# Named shapes. The shallow pair matches the basic comparison model (2 layers,
# 2 heads, 128-wide feed-forward); the deep pair keeps the 12-layer, 12-head,
# 768-wide shape of the well-known decoder/encoder model families while
# retaining the same block internals as the shallow models.
def basic_encoder(d_model: int | None = None, **overrides) -> TransformerConfig:
    return replace(
        TransformerConfig(BlockKind.ENCODER, layers=2, d_model=d_model, heads=2, ff_dim=128),
        **overrides,
    )


def basic_decoder(d_model: int | None = None, **overrides) -> TransformerConfig:
    return replace(
        TransformerConfig(BlockKind.DECODER, layers=2, d_model=d_model, heads=2, ff_dim=128),
        **overrides,
    )


def gpt_shaped(d_model: int = 768, ff_dim: int = 128, **overrides) -> TransformerConfig:
    return replace(
        TransformerConfig(BlockKind.DECODER, layers=12, d_model=d_model, heads=12, ff_dim=ff_dim),
        **overrides,
    )


def bert_shaped(d_model: int = 768, ff_dim: int = 128, **overrides) -> TransformerConfig:
    return replace(
        TransformerConfig(BlockKind.ENCODER, layers=12, d_model=d_model, heads=12, ff_dim=ff_dim),
        **overrides,
    )


PRESETS = {
    "basic_encoder": basic_encoder,
    "basic_decoder": basic_decoder,
    "gpt_shaped": gpt_shaped,
    "bert_shaped": bert_shaped,
}


def sinusoidal_table(length: int, d_model: int, dtype=np.float32) -> np.ndarray:
    positions = np.arange(length, dtype=np.float64)[:, None]
    dims = np.arange(d_model, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, 2.0 * (dims // 2) / d_model)
    table = np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class Positional(nncore.Module):
    """Adds position information to [B, T, d_model] inputs."""

    def __init__(
        self,
        mode: PositionalMode,
        max_length: int,
        d_model: int,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.mode = mode
        self.max_length = max_length
        if mode is PositionalMode.LEARNED:
            self.table = nncore.Parameter(
                rng.normal(0.0, 0.02, size=(max_length, d_model)).astype(dtype)
            )
        elif mode is PositionalMode.SINUSOIDAL:
            self.fixed = sinusoidal_table(max_length, d_model, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        length = x.shape[1]
        if length > self.max_length:
            raise TransformerError(
                f"sequence length {length} exceeds positional capacity {self.max_length}"
            )
        if self.mode is PositionalMode.NONE:
            return x
        if self.mode is PositionalMode.LEARNED:
            return x + self.table[:length]
        return x + Tensor(self.fixed[:length])


class Block(nncore.Module):
    """Pre-norm residual block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: TransformerConfig, *, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        d = cfg.d_model
        self.ln_attn = nncore.LayerNorm(d, dtype=dtype)
        self.attn = nncore.MultiHeadAttention(
            d, cfg.heads, causal=cfg.block is BlockKind.DECODER, rng=rng, dtype=dtype
        )
        self.drop_attn = nncore.Dropout(cfg.dropout, rng=rng)
        self.ln_ffn = nncore.LayerNorm(d, dtype=dtype)
        self.ffn_in = nncore.Dense(d, cfg.ff_dim, activation="gelu", rng=rng, dtype=dtype)
        self.ffn_out = nncore.Dense(cfg.ff_dim, d, rng=rng, dtype=dtype)
        self.drop_ffn = nncore.Dropout(cfg.dropout, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.drop_attn(self.attn(self.ln_attn(x)))
        return x + self.drop_ffn(self.ffn_out(self.ffn_in(self.ln_ffn(x))))


class Stack(nncore.Module):
    """`layers` blocks applied in sequence, then a final layer norm."""

    def __init__(self, cfg: TransformerConfig, *, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.blocks = [Block(cfg, rng=rng, dtype=dtype) for _ in range(cfg.layers)]
        self.ln_final = nncore.LayerNorm(cfg.d_model, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.cfg.d_model:
            raise TransformerError(
                f"stack expects width {self.cfg.d_model}, got {x.shape[-1]}"
            )
        for block in self.blocks:
            x = block(x)
        return self.ln_final(x)


def block_parameter_count(d_model: int, ff_dim: int) -> int:
    """Closed-form parameter count of one block."""
    attention = 4 * d_model * d_model + 4 * d_model
    ffn = d_model * ff_dim + ff_dim + ff_dim * d_model + d_model
    norms = 4 * d_model
    return attention + ffn + norms


def stack_parameter_count(cfg: TransformerConfig) -> int:
    cfg.validate()
    return cfg.layers * block_parameter_count(cfg.d_model, cfg.ff_dim) + 2 * cfg.d_model
