"""Classification heads: sequential transformer output -> malicious probability.

Six reductions from [B, T, d_model] to a single probability per window:

* last_token              - the final position's vector
* flatten                 - every position, concatenated (grows with T)
* gap                     - per-feature mean over positions
* featurewise_embedding   - learned dense map of each feature's T values to 1
* featurewise_projection  - the same map, bias-free and linear
* cls_token               - a learned token appended at the end of the
                            sequence before the transformer; its output
                            position feeds the classifier

Only cls_token modifies the sequence before the transformer; the appended
token is causally last, so decoder stacks let it attend to every real flow.
All heads finish in a ReLU MLP and a single sigmoid unit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nncore
from .nncore import Tensor
from .nncore import tensor as T


class HeadError(ValueError):
    pass


class HeadKind(enum.Enum):
    LAST_TOKEN = "last_token"
    FLATTEN = "flatten"
    GAP = "gap"
    FEATUREWISE_EMBEDDING = "featurewise_embedding"
    FEATUREWISE_PROJECTION = "featurewise_projection"
    CLS_TOKEN = "cls_token"

    @property
    def appends_token(self) -> bool:
        return self is HeadKind.CLS_TOKEN


@dataclass(frozen=True)
class HeadSpec:
    kind: HeadKind
    mlp_hidden: tuple[int, ...] = (128,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))
        if any(h <= 0 for h in self.mlp_hidden):
            raise HeadError(f"mlp_hidden must be positive, got {self.mlp_hidden}")

    def sequence_length(self, window: int) -> int:
        """Transformer sequence length for a given flow window size."""
        return window + 1 if self.kind.appends_token else window


class Head(nncore.Module):
    """Realised head bound to a d_model and window size."""

    def __init__(
        self,
        spec: HeadSpec,
        d_model: int,
        window: int,
        *,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.spec = spec
        self.d_model = d_model
        self.window = window
        self.seq_length = spec.sequence_length(window)

        kind = spec.kind
        if kind is HeadKind.CLS_TOKEN:
            self.token = nncore.Parameter(
                rng.normal(0.0, 0.02, size=(1, 1, d_model)).astype(dtype)
            )
        if kind is HeadKind.FEATUREWISE_EMBEDDING:
            self.pool = nncore.Dense(self.seq_length, 1, activation="relu", rng=rng, dtype=dtype)
        elif kind is HeadKind.FEATUREWISE_PROJECTION:
            self.pool = nncore.Dense(
                self.seq_length, 1, activation=None, bias=False, rng=rng, dtype=dtype
            )

        reduced = d_model * self.seq_length if kind is HeadKind.FLATTEN else d_model
        self.mlp = []
        width = reduced
        for hidden in spec.mlp_hidden:
            self.mlp.append(nncore.Dense(width, hidden, activation="relu", rng=rng, dtype=dtype))
            width = hidden
        self.output = nncore.Dense(width, 1, activation="sigmoid", rng=rng, dtype=dtype)

    # -- pipeline stages -------------------------------------------------

    def pre_transform_hook(self, encoded: Tensor) -> Tensor:
        """Sequence modification before the transformer (identity except CLS)."""
        if self.spec.kind is not HeadKind.CLS_TOKEN:
            return encoded
        batch = encoded.shape[0]
        token = T.broadcast_to(self.token, (batch, 1, self.d_model))
        return T.concat([encoded, token], axis=1)

    def reduce(self, seq_out: Tensor) -> Tensor:
        kind = self.spec.kind
        if seq_out.shape[1] != self.seq_length:
            raise HeadError(
                f"expected sequence length {self.seq_length}, got {seq_out.shape[1]}"
            )
        if kind in (HeadKind.LAST_TOKEN, HeadKind.CLS_TOKEN):
            return seq_out[:, -1, :]
        if kind is HeadKind.GAP:
            return seq_out.mean(axis=1)
        if kind is HeadKind.FLATTEN:
            batch = seq_out.shape[0]
            return seq_out.reshape(batch, self.seq_length * self.d_model)
        # featurewise: pool each feature's positions with one shared map
        batch = seq_out.shape[0]
        swapped = seq_out.transpose(0, 2, 1)
        pooled = self.pool(swapped)
        return pooled.reshape(batch, self.d_model)

    def classify(self, reduced: Tensor) -> Tensor:
        out = reduced
        for layer in self.mlp:
            out = layer(out)
        out = self.output(out)
        return out.reshape(out.shape[0])

    def __call__(self, seq_out: Tensor) -> Tensor:
        return self.classify(self.reduce(seq_out))

    def mlp_parameter_count(self) -> int:
        """Parameters of the classifying MLP alone (hidden layers + output)."""
        return sum(layer.count_parameters() for layer in self.mlp) + self.output.count_parameters()
