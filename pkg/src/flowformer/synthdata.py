"""Desk-scale synthetic flow datasets with known ground truth.

Three task families, all fully reproducible from a seed:

* last_flow_separable - the label is a simple function of the final flow's
  own numerical features; a plain per-flow classifier solves it.
* marker_at_lag - the label is 1 iff a designated marker level appeared in
  the marker column exactly `lag` flows before the final flow.  The final
  flow itself carries no signal, and the marker level also fires at other
  lags as a distractor, so per-flow classifiers stay near chance and only
  sequence models can solve the task.
* noise - labels independent of all features; anything scoring well here is
  leaking evaluation data.

The default column layout mirrors a NetFlow-style export: a handful of
categorical fields (protocol, ports, flags) and a few dozen numerical
counters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import FlowTable
from .schema import DatasetSpec, save_spec

BENIGN = "Benign"
MALICIOUS = "Attack"
MARKER_LEVEL = "M_EVENT"

_CATEGORICAL_POOL = [
    "PROTOCOL",
    "L4_SRC_PORT",
    "L4_DST_PORT",
    "TCP_FLAGS",
    "L7_PROTO",
    "CLIENT_TCP_FLAGS",
    "SERVER_TCP_FLAGS",
    "ICMP_TYPE",
]

_NUMERICAL_POOL = [
    "IN_BYTES",
    "OUT_BYTES",
    "IN_PKTS",
    "OUT_PKTS",
    "FLOW_DURATION_MS",
    "DURATION_IN",
    "DURATION_OUT",
    "MIN_TTL",
    "MAX_TTL",
    "LONGEST_FLOW_PKT",
    "SHORTEST_FLOW_PKT",
    "MIN_IP_PKT_LEN",
    "MAX_IP_PKT_LEN",
    "SRC_TO_DST_SECOND_BYTES",
    "DST_TO_SRC_SECOND_BYTES",
    "RETRANSMITTED_IN_BYTES",
    "RETRANSMITTED_IN_PKTS",
    "RETRANSMITTED_OUT_BYTES",
    "RETRANSMITTED_OUT_PKTS",
    "SRC_TO_DST_AVG_THROUGHPUT",
    "DST_TO_SRC_AVG_THROUGHPUT",
    "NUM_PKTS_UP_TO_128_BYTES",
    "NUM_PKTS_128_TO_256_BYTES",
    "NUM_PKTS_256_TO_512_BYTES",
    "NUM_PKTS_512_TO_1024_BYTES",
    "NUM_PKTS_1024_TO_1514_BYTES",
    "TCP_WIN_MAX_IN",
    "TCP_WIN_MAX_OUT",
    "DNS_QUERY_TYPE",
    "FTP_COMMAND_RET_CODE",
]


class SynthError(ValueError):
    pass


class SyntheticTask(enum.Enum):
    LAST_FLOW_SEPARABLE = "last_flow_separable"
    MARKER_AT_LAG = "marker_at_lag"
    NOISE = "noise"


@dataclass(frozen=True)
class SpecShape:
    """Column layout of a generated dataset."""

    n_categorical: int = 8
    n_numerical: int = 30
    levels: int = 40

    def column_names(self) -> tuple[list[str], list[str]]:
        cats = [
            _CATEGORICAL_POOL[i] if i < len(_CATEGORICAL_POOL) else f"CAT_{i}"
            for i in range(self.n_categorical)
        ]
        nums = [
            _NUMERICAL_POOL[i] if i < len(_NUMERICAL_POOL) else f"NUM_{i}"
            for i in range(self.n_numerical)
        ]
        return cats, nums


NETFLOW_SHAPE = SpecShape()

COMPACT_SHAPE = SpecShape(n_categorical=4, n_numerical=8, levels=8)


def generate(
    task: SyntheticTask,
    rows: int,
    shape: SpecShape = NETFLOW_SHAPE,
    seed: int = 0,
    *,
    lag: int = 4,
    positive_rate: float = 0.35,
    window_hint: int = 8,
) -> tuple[DatasetSpec, FlowTable]:
    """Generate a spec + table pair compatible with the full pipeline."""
    if rows < window_hint * 10:
        raise SynthError(f"need at least {window_hint * 10} rows, got {rows}")
    if shape.n_numerical < 2 or shape.levels < 3:
        raise SynthError(f"infeasible shape {shape}")
    if task is SyntheticTask.MARKER_AT_LAG and shape.n_categorical < 1:
        raise SynthError("marker task needs at least one categorical feature")
    if not 0.0 < positive_rate < 1.0:
        raise SynthError(f"positive_rate must be in (0, 1), got {positive_rate}")

    rng = np.random.default_rng(seed)
    cat_names, num_names = shape.column_names()
    spec = DatasetSpec(
        name=f"synth-{task.value}",
        categorical_features=tuple(cat_names),
        numerical_features=tuple(num_names),
        class_column="Label",
        benign_label=BENIGN,
    )

    columns: dict[str, np.ndarray] = {}
    level_pool = np.array([f"v{i:03d}" for i in range(shape.levels)], dtype=object)
    # Zipf-ish level draw so top-N truncation has real frequency structure.
    weights = 1.0 / np.arange(1, shape.levels + 1)
    weights /= weights.sum()
    for name in cat_names:
        columns[name] = level_pool[rng.choice(shape.levels, size=rows, p=weights)]
    for name in num_names:
        columns[name] = rng.exponential(scale=200.0, size=rows)

    if task is SyntheticTask.NOISE:
        labels = rng.random(rows) < positive_rate
    elif task is SyntheticTask.LAST_FLOW_SEPARABLE:
        labels = rng.random(rows) < positive_rate
        centers = np.where(labels, 60.0, 4.0)
        columns[num_names[0]] = np.maximum(
            rng.normal(centers, 0.15 * centers), 0.0
        )
        centers_b = np.where(labels, 3.0, 45.0)
        columns[num_names[1]] = np.maximum(
            rng.normal(centers_b, 0.15 * centers_b), 0.0
        )
    else:
        marker_col = cat_names[0]
        fired = rng.random(rows) < positive_rate
        levels = columns[marker_col].copy()
        levels[fired] = MARKER_LEVEL
        columns[marker_col] = levels
        labels = np.zeros(rows, dtype=bool)
        labels[lag:] = levels[:-lag] == MARKER_LEVEL

    columns["Label"] = np.where(labels, MALICIOUS, BENIGN).astype(object)
    return spec, FlowTable(spec, columns, rows)


def write_dataset(
    spec: DatasetSpec,
    table: FlowTable,
    spec_path: str | Path,
    data_path: str | Path,
) -> None:
    """Write standard spec + delimited data files consumed by ingest.

    Output is byte-deterministic: floats are rendered with repr, which
    round-trips exactly through the loader.
    """
    save_spec(spec, spec_path)
    header = list(spec.categorical_features) + list(spec.numerical_features) + [spec.class_column]
    lines = [",".join(header)]
    for i in range(table.row_count):
        cells = []
        for name in spec.categorical_features:
            cells.append(str(table.columns[name][i]))
        for name in spec.numerical_features:
            cells.append(repr(float(table.columns[name][i])))
        cells.append(str(table.columns[spec.class_column][i]))
        lines.append(",".join(cells))
    Path(data_path).write_text("\n".join(lines) + "\n")
