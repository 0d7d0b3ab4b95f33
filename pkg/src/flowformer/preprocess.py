"""Fit-on-train feature preparation for flow tables.

Categorical features are reduced to their N most frequent training levels
(ties broken by first occurrence in the table); every other level, and the
``__missing__`` sentinel, shares out-of-vocabulary index 0.  Numerical
features are min-max scaled after a log1p transform, with negative inputs
clamped to zero first since flow counters are non-negative by nature.

Fitting sees only the training part.  Transforming evaluation data never
mutates the fitted state, and values outside the training range are clamped
into [0, 1] rather than extrapolated.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import FlowTable
from .schema import DatasetSpec

STATE_VERSION = 1

DEFAULT_LEVEL_BUDGET = 32


class PreprocessError(ValueError):
    pass


class CategoricalFormat(enum.Enum):
    INTEGER_INDEX = "integer_index"
    ONE_HOT = "one_hot"


@dataclass(frozen=True)
class CategoricalMap:
    """Top-N level mapping for one categorical feature.

    level_to_index maps the N most frequent training levels to 1..N in
    frequency order; index 0 is reserved for everything else.
    """

    feature: str
    budget: int
    level_to_index: dict[str, int]

    @property
    def fitted_levels(self) -> int:
        return len(self.level_to_index)

    @property
    def table_size(self) -> int:
        """Number of distinct indices, OOV slot included."""
        return self.fitted_levels + 1

    def index_of(self, level: str) -> int:
        return self.level_to_index.get(level, 0)


@dataclass(frozen=True)
class NumericalParams:
    """log1p-domain min/max bounds of one numerical feature on train data."""

    feature: str
    min_log: float
    max_log: float

    def __post_init__(self) -> None:
        if self.min_log > self.max_log:
            raise PreprocessError(
                f"{self.feature}: min_log {self.min_log} exceeds max_log {self.max_log}"
            )


@dataclass(frozen=True)
class PreprocessorState:
    categorical: dict[str, CategoricalMap]
    numerical: dict[str, NumericalParams]
    categorical_format: CategoricalFormat
    numerical_order: tuple[str, ...]
    categorical_order: tuple[str, ...]


def _log1p_clamped(values: np.ndarray) -> np.ndarray:
    return np.log1p(np.maximum(values, 0.0))


def fit(
    train: FlowTable,
    spec: DatasetSpec,
    level_budget: int = DEFAULT_LEVEL_BUDGET,
    categorical_format: CategoricalFormat = CategoricalFormat.ONE_HOT,
) -> PreprocessorState:
    """Fit per-feature preprocessing parameters on the training part only."""
    if level_budget <= 0:
        raise PreprocessError(f"level budget must be positive, got {level_budget}")
    if train.row_count == 0:
        raise PreprocessError("cannot fit on an empty table")

    categorical: dict[str, CategoricalMap] = {}
    for name in spec.categorical_features:
        column = train.columns[name]
        counts: dict[str, int] = {}
        first_seen: dict[str, int] = {}
        for position, level in enumerate(column):
            counts[level] = counts.get(level, 0) + 1
            if level not in first_seen:
                first_seen[level] = position
        ranked = sorted(counts, key=lambda lv: (-counts[lv], first_seen[lv]))
        kept = ranked[:level_budget]
        categorical[name] = CategoricalMap(
            feature=name,
            budget=level_budget,
            level_to_index={lv: i + 1 for i, lv in enumerate(kept)},
        )

    numerical: dict[str, NumericalParams] = {}
    for name in spec.numerical_features:
        logged = _log1p_clamped(train.columns[name])
        numerical[name] = NumericalParams(
            feature=name,
            min_log=float(logged.min()),
            max_log=float(logged.max()),
        )

    return PreprocessorState(
        categorical=categorical,
        numerical=numerical,
        categorical_format=categorical_format,
        numerical_order=spec.numerical_features,
        categorical_order=spec.categorical_features,
    )


def output_width(state: PreprocessorState) -> int:
    """Width of the transformed matrix for the state's categorical format."""
    width = len(state.numerical_order)
    for name in state.categorical_order:
        if state.categorical_format is CategoricalFormat.INTEGER_INDEX:
            width += 1
        else:
            width += state.categorical[name].table_size
    return width


def categorical_block_slices(state: PreprocessorState) -> dict[str, slice]:
    """Column span of each categorical feature inside the transformed matrix."""
    spans: dict[str, slice] = {}
    offset = len(state.numerical_order)
    for name in state.categorical_order:
        width = (
            1
            if state.categorical_format is CategoricalFormat.INTEGER_INDEX
            else state.categorical[name].table_size
        )
        spans[name] = slice(offset, offset + width)
        offset += width
    return spans


def transform(table: FlowTable, state: PreprocessorState) -> np.ndarray:
    """Transform a table into a float32 matrix [rows, output_width].

    Column order is the numerical features in spec order, then one block per
    categorical feature in spec order.  Numerical outputs are clamped into
    [0, 1]; constant training columns map to 0.0.  Pure function of
    (table, state): the fitted state is never mutated.
    """
    for name in state.numerical_order + state.categorical_order:
        if name not in table.columns:
            raise PreprocessError(f"table has no column {name!r} required by fitted state")

    n = table.row_count
    out = np.zeros((n, output_width(state)), dtype=np.float32)

    for j, name in enumerate(state.numerical_order):
        params = state.numerical[name]
        logged = _log1p_clamped(table.columns[name])
        span = params.max_log - params.min_log
        if span == 0.0:
            continue  # constant training column carries no information
        scaled = (logged - params.min_log) / span
        out[:, j] = np.clip(scaled, 0.0, 1.0)

    for name, block in categorical_block_slices(state).items():
        cmap = state.categorical[name]
        indices = np.fromiter(
            (cmap.index_of(level) for level in table.columns[name]),
            dtype=np.int64,
            count=n,
        )
        if state.categorical_format is CategoricalFormat.INTEGER_INDEX:
            out[:, block.start] = indices.astype(np.float32)
        else:
            out[np.arange(n), block.start + indices] = 1.0

    return out


def integer_indices(table: FlowTable, state: PreprocessorState) -> np.ndarray:
    """Integer index matrix [rows, n_categorical] regardless of stored format."""
    n = table.row_count
    out = np.zeros((n, len(state.categorical_order)), dtype=np.int64)
    for j, name in enumerate(state.categorical_order):
        cmap = state.categorical[name]
        out[:, j] = np.fromiter(
            (cmap.index_of(level) for level in table.columns[name]),
            dtype=np.int64,
            count=n,
        )
    return out


def save_state(state: PreprocessorState, path: str | Path) -> None:
    doc = {
        "version": STATE_VERSION,
        "categorical_format": state.categorical_format.value,
        "numerical_order": list(state.numerical_order),
        "categorical_order": list(state.categorical_order),
        "categorical": {
            name: {
                "budget": cmap.budget,
                "level_to_index": cmap.level_to_index,
            }
            for name, cmap in state.categorical.items()
        },
        "numerical": {
            name: {"min_log": params.min_log, "max_log": params.max_log}
            for name, params in state.numerical.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_state(path: str | Path) -> PreprocessorState:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != STATE_VERSION:
        raise PreprocessError(f"unsupported preprocessor state version {doc.get('version')!r}")
    categorical = {
        name: CategoricalMap(
            feature=name,
            budget=entry["budget"],
            level_to_index={str(k): int(v) for k, v in entry["level_to_index"].items()},
        )
        for name, entry in doc["categorical"].items()
    }
    numerical = {
        name: NumericalParams(name, float(entry["min_log"]), float(entry["max_log"]))
        for name, entry in doc["numerical"].items()
    }
    return PreprocessorState(
        categorical=categorical,
        numerical=numerical,
        categorical_format=CategoricalFormat(doc["categorical_format"]),
        numerical_order=tuple(doc["numerical_order"]),
        categorical_order=tuple(doc["categorical_order"]),
    )
