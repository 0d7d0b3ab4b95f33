"""Columnar ingestion of delimited flow files, cleaning, splitting, windowing.

Flow records arrive as delimiter-separated text with a header row.  They are
loaded into an immutable columnar table (text columns for categorical and
class fields, float64 for numerical fields), cleaned of non-finite and
unparseable values, split into train/eval parts, and finally materialised as
fixed-length windows of consecutive flows.

Windows are built over file order globally; per-endpoint sequencing is out of
scope and the assumption is documented here.  Only the final flow of a window
carries the window's label.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .schema import DatasetSpec, validate_against_header

MISSING_LEVEL = "__missing__"


class IngestError(ValueError):
    """Raised for unreadable, empty, or structurally invalid data files."""


class SplitMode(enum.Enum):
    TAIL_EVAL = "tail_eval"
    HEAD_EVAL = "head_eval"
    STRATIFIED = "stratified"


@dataclass(frozen=True)
class SplitConfig:
    mode: SplitMode = SplitMode.TAIL_EVAL
    eval_fraction: float = 0.10


@dataclass(frozen=True)
class CleaningReport:
    """Counts of values replaced during load, per column."""

    numerical_replacements: dict[str, int]
    categorical_missing: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.numerical_replacements.values()) + sum(
            self.categorical_missing.values()
        )


@dataclass
class FlowTable:
    """In-memory columnar dataset. Immutable by convention after load."""

    spec: DatasetSpec
    columns: dict[str, np.ndarray]
    row_count: int
    cleaning: CleaningReport = field(
        default_factory=lambda: CleaningReport({}, {})
    )

    def __post_init__(self) -> None:
        for name, col in self.columns.items():
            if len(col) != self.row_count:
                raise IngestError(
                    f"column {name!r} has {len(col)} entries, expected {self.row_count}"
                )

    def row_labels(self) -> np.ndarray:
        """Binary per-row label: 1 where the class differs from the benign label."""
        classes = self.columns[self.spec.class_column]
        return (classes != self.spec.benign_label).astype(np.int64)

    def take(self, indices: np.ndarray) -> "FlowTable":
        cols = {name: col[indices] for name, col in self.columns.items()}
        return FlowTable(self.spec, cols, int(len(indices)))


def _clean_numerical(raw: list[str]) -> tuple[np.ndarray, int]:
    out = np.zeros(len(raw), dtype=np.float64)
    replaced = 0
    for i, cell in enumerate(raw):
        try:
            value = float(cell)
        except (TypeError, ValueError):
            replaced += 1
            continue
        if math.isfinite(value):
            out[i] = value
        else:
            replaced += 1
    return out, replaced


def _clean_categorical(raw: list[str]) -> tuple[np.ndarray, int]:
    missing = 0
    out = []
    for cell in raw:
        if cell is None or cell == "":
            out.append(MISSING_LEVEL)
            missing += 1
        else:
            out.append(cell)
    return np.array(out, dtype=object), missing


def load_table(path: str | Path, spec: DatasetSpec, delimiter: str = ",") -> FlowTable:
    """Load a delimited text file into a cleaned FlowTable.

    Numerical cells that are missing, unparseable, or non-finite become 0.0
    (neutral under the downstream log transform) and are counted.  Empty
    categorical cells become the sentinel level ``__missing__``.  Columns not
    declared in the spec are dropped.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise IngestError(f"cannot read data file {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"data file {path} is empty") from None
        header = [h.strip() for h in header]
        validate_against_header(spec, header)
        index = {name: header.index(name) for name in header}
        wanted = list(spec.feature_columns) + [spec.class_column]
        raw: dict[str, list[str]] = {name: [] for name in wanted}
        width = len(header)
        for row in reader:
            if not row:
                continue
            if len(row) < width:
                row = row + [""] * (width - len(row))
            for name in wanted:
                raw[name].append(row[index[name]])

    n_rows = len(raw[spec.class_column])
    if n_rows == 0:
        raise IngestError(f"data file {path} has a header but zero data rows")

    columns: dict[str, np.ndarray] = {}
    numerical_replacements: dict[str, int] = {}
    categorical_missing: dict[str, int] = {}
    for name in spec.numerical_features:
        columns[name], replaced = _clean_numerical(raw[name])
        numerical_replacements[name] = replaced
    for name in spec.categorical_features:
        columns[name], missing = _clean_categorical(raw[name])
        categorical_missing[name] = missing
    classes, _ = _clean_categorical(raw[spec.class_column])
    columns[spec.class_column] = classes

    report = CleaningReport(numerical_replacements, categorical_missing)
    return FlowTable(spec, columns, n_rows, report)


def split(table: FlowTable, cfg: SplitConfig | None = None) -> tuple[FlowTable, FlowTable]:
    """Partition a table into (train, eval) parts.

    TAIL_EVAL (default) holds out the final contiguous block, which respects
    flow ordering for sequence models; HEAD_EVAL holds out the first block.
    STRATIFIED preserves the benign/malicious ratio within one row per class
    while keeping row order inside each part.  In every mode the two parts
    are disjoint and jointly cover the table.
    """
    cfg = cfg or SplitConfig()
    if not 0.0 < cfg.eval_fraction < 1.0:
        raise IngestError(f"eval_fraction must be in (0, 1), got {cfg.eval_fraction}")
    n = table.row_count
    if n < 10:
        raise IngestError(f"need at least 10 rows to split, got {n}")
    n_eval = int(round(cfg.eval_fraction * n))
    n_eval = min(max(n_eval, 1), n - 1)
    indices = np.arange(n)

    if cfg.mode is SplitMode.TAIL_EVAL:
        train_idx, eval_idx = indices[: n - n_eval], indices[n - n_eval :]
    elif cfg.mode is SplitMode.HEAD_EVAL:
        eval_idx, train_idx = indices[:n_eval], indices[n_eval:]
    else:
        labels = table.row_labels()
        eval_mask = np.zeros(n, dtype=bool)
        # Largest-remainder allocation keeps the total at round(frac * n)
        # while staying within one row of each class's own proportion.
        counts = {c: int((labels == c).sum()) for c in (0, 1)}
        quotas = {c: cfg.eval_fraction * counts[c] for c in (0, 1)}
        take = {c: int(math.floor(quotas[c])) for c in (0, 1)}
        leftover = n_eval - sum(take.values())
        by_remainder = sorted((0, 1), key=lambda c: quotas[c] - take[c], reverse=True)
        for c in by_remainder[: max(leftover, 0)]:
            take[c] += 1
        for c in (0, 1):
            take[c] = min(take[c], counts[c])
        for c in (0, 1):
            class_rows = indices[labels == c]
            if take[c] > 0:
                eval_mask[class_rows[-take[c] :]] = True
        train_idx, eval_idx = indices[~eval_mask], indices[eval_mask]

    return table.take(train_idx), table.take(eval_idx)


@dataclass
class WindowBatch:
    """A batch of fixed-length flow windows ready for the model.

    features has shape [batch, W, feature_width]; labels[i] is 1 iff the
    final flow of window i is malicious.
    """

    features: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def window(self) -> int:
        return self.features.shape[1]


class WindowSet:
    """All contiguous windows over one (transformed) feature matrix.

    The window view is built with stride tricks, so no row data is copied
    until batches are materialised.  Multiple independent iterations over
    the same WindowSet are permitted; a single iteration is single-consumer.
    """

    def __init__(self, features: np.ndarray, row_labels: np.ndarray, window: int, stride: int = 1):
        if window <= 0 or stride <= 0:
            raise IngestError("window and stride must be positive")
        n_rows = features.shape[0]
        if window > n_rows:
            raise IngestError(f"window {window} exceeds available rows {n_rows}")
        if row_labels.shape[0] != n_rows:
            raise IngestError("row_labels length must match feature rows")
        self.window = window
        self.stride = stride
        self._view = np.lib.stride_tricks.sliding_window_view(features, window, axis=0)
        starts = np.arange(0, n_rows - window + 1, stride)
        self._starts = starts
        self.labels = row_labels[starts + window - 1].astype(np.int64)

    def __len__(self) -> int:
        return len(self._starts)

    @property
    def feature_width(self) -> int:
        return self._view.shape[1]

    def slice(self, order: np.ndarray) -> WindowBatch:
        starts = self._starts[order]
        # sliding_window_view puts the window axis last; move it before features.
        feats = self._view[starts].transpose(0, 2, 1)
        return WindowBatch(np.ascontiguousarray(feats), self.labels[order])

    def head(self, count: int) -> "WindowSet":
        clone = object.__new__(WindowSet)
        clone.window = self.window
        clone.stride = self.stride
        clone._view = self._view
        clone._starts = self._starts[:count]
        clone.labels = self.labels[:count]
        return clone

    def tail(self, count: int) -> "WindowSet":
        clone = object.__new__(WindowSet)
        clone.window = self.window
        clone.stride = self.stride
        clone._view = self._view
        clone._starts = self._starts[len(self._starts) - count :]
        clone.labels = self.labels[len(self.labels) - count :]
        return clone

    def iter_batches(self, batch_size: int, shuffle: bool = False, rng: np.random.Generator | None = None):
        """Yield WindowBatch objects covering every window exactly once."""
        order = np.arange(len(self))
        if shuffle:
            if rng is None:
                raise IngestError("shuffle requires an explicit rng")
            rng.shuffle(order)
        for lo in range(0, len(order), batch_size):
            yield self.slice(order[lo : lo + batch_size])


def windows(features: np.ndarray, row_labels: np.ndarray, window: int, stride: int = 1) -> WindowSet:
    """Build the window set over a transformed feature matrix.

    Yields floor((rows - window) / stride) + 1 windows in deterministic row
    order.  Apply per split part so no window crosses the train/eval
    boundary.
    """
    return WindowSet(features, row_labels, window, stride)
