"""Input encoders: preprocessed flow windows -> transformer-ready vectors.

Six strategies, all per-position maps (no mixing across sequence positions):

* categorical_lookup     - learned lookup table per categorical feature
                           (integer-index preprocessing)
* categorical_dense      - per-feature single-layer net over one-hot blocks
* categorical_projection - per-feature bias-free linear map
* record_dense           - one shared layer embedding the whole flow record
* record_projection      - the same, bias-free and without activation
* none                   - pass the preprocessed record straight through

Categorical strategies keep numerical columns untouched and concatenate them
after the encoded categorical vectors.  Record strategies consume the whole
one-hot record at once; passthrough fixes the model width to the raw width.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nncore
from .nncore import Tensor
from .nncore import tensor as T
from .preprocess import CategoricalFormat, PreprocessorState, categorical_block_slices, output_width

DEFAULT_RECORD_DIM = 128

MAX_CATEGORICAL_DIM = 32


class EncoderError(ValueError):
    pass


class EncodingKind(enum.Enum):
    CATEGORICAL_LOOKUP = "categorical_lookup"
    CATEGORICAL_DENSE = "categorical_dense"
    CATEGORICAL_PROJECTION = "categorical_projection"
    RECORD_DENSE = "record_dense"
    RECORD_PROJECTION = "record_projection"
    NONE = "none"

    @property
    def required_format(self) -> CategoricalFormat:
        if self is EncodingKind.CATEGORICAL_LOOKUP:
            return CategoricalFormat.INTEGER_INDEX
        return CategoricalFormat.ONE_HOT

    @property
    def is_record_level(self) -> bool:
        return self in (EncodingKind.RECORD_DENSE, EncodingKind.RECORD_PROJECTION)

    @property
    def is_categorical_level(self) -> bool:
        return self in (
            EncodingKind.CATEGORICAL_LOOKUP,
            EncodingKind.CATEGORICAL_DENSE,
            EncodingKind.CATEGORICAL_PROJECTION,
        )


def default_categorical_dim(table_size: int) -> int:
    """Embedding width for a categorical feature with the given index count."""
    return min(MAX_CATEGORICAL_DIM, table_size)


@dataclass(frozen=True)
class EncoderSpec:
    """Configuration of one input-encoding strategy.

    per_categorical_dim None means the per-feature default sized from the
    fitted level count; d_model applies to record-level kinds only.
    """

    kind: EncodingKind
    per_categorical_dim: int | None = None
    d_model: int = DEFAULT_RECORD_DIM

    def categorical_dims(self, state: PreprocessorState) -> dict[str, int]:
        dims: dict[str, int] = {}
        for name in state.categorical_order:
            table_size = state.categorical[name].table_size
            dims[name] = (
                self.per_categorical_dim
                if self.per_categorical_dim is not None
                else default_categorical_dim(table_size)
            )
        return dims

    def resulting_width(self, state: PreprocessorState) -> int:
        if self.kind.is_record_level:
            return self.d_model
        if self.kind is EncodingKind.NONE:
            return output_width(state)
        return len(state.numerical_order) + sum(self.categorical_dims(state).values())


class Encoder(nncore.Module):
    """Realised encoder bound to a fitted preprocessor state."""

    def __init__(
        self,
        spec: EncoderSpec,
        state: PreprocessorState,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        if state.categorical_format is not spec.kind.required_format:
            raise EncoderError(
                f"{spec.kind.value} requires {spec.kind.required_format.value} "
                f"preprocessing, state was fitted as {state.categorical_format.value}"
            )
        self.spec = spec
        self.n_numerical = len(state.numerical_order)
        self.raw_width = output_width(state)
        self.width = spec.resulting_width(state)
        self.blocks = categorical_block_slices(state)
        self.categorical_order = state.categorical_order

        kind = spec.kind
        if kind is EncodingKind.CATEGORICAL_LOOKUP:
            dims = spec.categorical_dims(state)
            self.tables = [
                nncore.Embedding(state.categorical[name].table_size, dims[name], rng=rng, dtype=dtype)
                for name in state.categorical_order
            ]
        elif kind.is_categorical_level:
            dims = spec.categorical_dims(state)
            linear = kind is EncodingKind.CATEGORICAL_PROJECTION
            self.layers = [
                nncore.Dense(
                    state.categorical[name].table_size,
                    dims[name],
                    activation=None if linear else "relu",
                    bias=not linear,
                    rng=rng,
                    dtype=dtype,
                )
                for name in state.categorical_order
            ]
        elif kind.is_record_level:
            linear = kind is EncodingKind.RECORD_PROJECTION
            self.record_layer = nncore.Dense(
                self.raw_width,
                spec.d_model,
                activation=None if linear else "relu",
                bias=not linear,
                rng=rng,
                dtype=dtype,
            )

    def __call__(self, window: Tensor) -> Tensor:
        """Encode [B, W, raw_width] into [B, W, resulting_width]."""
        if window.shape[-1] != self.raw_width:
            raise EncoderError(
                f"window width {window.shape[-1]} != preprocessed width {self.raw_width}"
            )
        kind = self.spec.kind
        if kind is EncodingKind.NONE:
            return window
        if kind.is_record_level:
            return self.record_layer(window)

        numericals = window[:, :, : self.n_numerical]
        parts: list[Tensor] = []
        if kind is EncodingKind.CATEGORICAL_LOOKUP:
            for name, table in zip(self.categorical_order, self.tables):
                indices = np.rint(window.data[:, :, self.blocks[name].start]).astype(np.int64)
                parts.append(table(indices))
        else:
            for name, layer in zip(self.categorical_order, self.layers):
                parts.append(layer(window[:, :, self.blocks[name]]))
        if self.n_numerical:
            parts.append(numericals)
        return T.concat(parts, axis=-1)


def build_encoder(
    spec: EncoderSpec,
    state: PreprocessorState,
    *,
    rng: np.random.Generator,
    dtype=np.float32,
) -> Encoder:
    return Encoder(spec, state, rng=rng, dtype=dtype)
