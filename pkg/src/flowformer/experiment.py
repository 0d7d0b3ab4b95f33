"""Grid-search orchestration, repeat handling, results persistence, export.

Runs expand to the full Cartesian product of the search axes in declaration
order (block, layers, ff_dim, heads, learning_rate, encoding, head kind);
combinations whose model width is not divisible by the head count are
filtered out and logged.  Each surviving configuration runs a fixed number
of repeats with seeds derived from the root seed, so interrupted grids
resume without duplicating work and identical inputs reproduce identical
results.

Results are persisted as append-only line-delimited JSON records; export
produces a per-run table plus a best-of summary grouped by (encoding, head).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from .encoders import DEFAULT_RECORD_DIM, EncoderSpec, EncodingKind
from .heads import HeadKind, HeadSpec
from .ingest import FlowTable, SplitConfig, WindowSet, split, windows
from .preprocess import (
    CategoricalFormat,
    PreprocessorState,
    fit,
    transform,
)
from .schema import DatasetSpec
from .trainer import (
    ModelConfig,
    TrainProtocol,
    build_model,
    evaluate,
    measure_inference_throughput,
    train,
    training_throughput_from_history,
)
from .transformer import BlockKind, PositionalMode, TransformerConfig

logger = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Grid axes; the defaults are the standard sweep values."""

    blocks: tuple[BlockKind, ...] = (BlockKind.ENCODER, BlockKind.DECODER)
    layers: tuple[int, ...] = (2, 4, 6, 8)
    ff_dims: tuple[int, ...] = (128, 256, 512)
    heads: tuple[int, ...] = (2, 4, 6, 8, 12)
    learning_rates: tuple[float, ...] = (0.01, 0.001, 0.0005, 0.0001, 0.00001)
    encodings: tuple[EncodingKind, ...] = (EncodingKind.RECORD_PROJECTION,)
    head_kinds: tuple[HeadKind, ...] = (HeadKind.LAST_TOKEN,)
    repeats: int = 3
    window: int = 8
    d_model: int = DEFAULT_RECORD_DIM
    per_categorical_dim: int | None = None
    batch_size: int = 128
    positional: PositionalMode = PositionalMode.LEARNED
    root_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("blocks", "layers", "ff_dims", "heads", "learning_rates", "encodings", "head_kinds"):
            if not getattr(self, name):
                raise ExperimentError(f"search axis {name} is empty")
        if self.repeats < 1:
            raise ExperimentError("repeats must be >= 1")


@dataclass(frozen=True)
class GridCell:
    """One point of the expanded grid (before repeats)."""

    index: int
    config: ModelConfig


@dataclass(frozen=True)
class ExpandResult:
    cells: tuple[GridCell, ...]
    skipped: tuple[tuple[ModelConfig, str], ...]

    @property
    def total(self) -> int:
        return len(self.cells) + len(self.skipped)


def derive_seed(root_seed: int, config_index: int, repeat: int) -> int:
    """Stable per-run seed; Python's salted hash() is unusable here."""
    digest = hashlib.sha256(f"{root_seed}:{config_index}:{repeat}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _cell_width(cfg: ModelConfig, state: PreprocessorState | None) -> int | None:
    if cfg.encoder.kind.is_record_level:
        return cfg.encoder.d_model
    if state is None:
        return None
    return cfg.encoder.resulting_width(state)


def expand(
    space: SearchSpace,
    states: dict[CategoricalFormat, PreprocessorState] | None = None,
) -> ExpandResult:
    """Full Cartesian product in axis declaration order, divisibility-filtered.

    Categorical and passthrough encodings have data-dependent widths; their
    divisibility filter needs fitted preprocessor states and is skipped (left
    to model construction) when none are supplied.
    """
    cells: list[GridCell] = []
    skipped: list[tuple[ModelConfig, str]] = []
    index = 0
    for block in space.blocks:
        for layers in space.layers:
            for ff_dim in space.ff_dims:
                for heads in space.heads:
                    for lr in space.learning_rates:
                        for encoding in space.encodings:
                            for head_kind in space.head_kinds:
                                cfg = ModelConfig(
                                    encoder=EncoderSpec(
                                        kind=encoding,
                                        per_categorical_dim=space.per_categorical_dim,
                                        d_model=space.d_model,
                                    ),
                                    transformer=TransformerConfig(
                                        block=block,
                                        layers=layers,
                                        d_model=None,
                                        heads=heads,
                                        ff_dim=ff_dim,
                                        positional=space.positional,
                                    ),
                                    head=HeadSpec(kind=head_kind),
                                    window=space.window,
                                    learning_rate=lr,
                                    batch_size=space.batch_size,
                                )
                                state = (
                                    states.get(encoding.required_format)
                                    if states
                                    else None
                                )
                                width = _cell_width(cfg, state)
                                if width is not None and width % heads != 0:
                                    reason = (
                                        f"model width {width} not divisible by "
                                        f"{heads} heads"
                                    )
                                    logger.info(
                                        "skipping grid combination %s: %s", index, reason
                                    )
                                    skipped.append((cfg, reason))
                                else:
                                    cells.append(GridCell(len(cells), cfg))
                                index += 1
    return ExpandResult(tuple(cells), tuple(skipped))


# -- results store -------------------------------------------------------------


class ResultsStore:
    """Append-only line-delimited record store with resumable keys."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "results.jsonl"

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with self.path.open() as handle:
            for line in handle:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def completed_keys(self) -> set[tuple[int, int]]:
        return {(r["config_index"], r["repeat"]) for r in self.records()}

    def append(self, record: dict) -> None:
        with self.path.open("a") as handle:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
            handle.flush()

    # -- views ---------------------------------------------------------

    def best_per_config(self) -> dict[int, dict]:
        """Max-F1 ok repeat per config; diverged marker when no repeat is ok."""
        grouped: dict[int, list[dict]] = {}
        for record in self.records():
            grouped.setdefault(record["config_index"], []).append(record)
        best: dict[int, dict] = {}
        for config_index, runs in grouped.items():
            ok = [r for r in runs if r["status"] == "ok"]
            if ok:
                best[config_index] = max(
                    ok,
                    key=lambda r: (r["f1"] if r.get("f1") is not None else -1.0, -r["repeat"]),
                )
            else:
                marker = dict(runs[0])
                marker["status"] = "diverged"
                best[config_index] = marker
        return best


EXPORT_COLUMNS = [
    "config_index",
    "repeat",
    "seed",
    "encoding",
    "head",
    "block",
    "layers",
    "ff_dim",
    "heads",
    "d_model",
    "window",
    "learning_rate",
    "batch_size",
    "parameter_count",
    "f1",
    "detection_rate",
    "false_alarm_rate",
    "tp",
    "tn",
    "fp",
    "fn",
    "epochs_run",
    "best_epoch",
    "train_flows_per_sec",
    "infer_flows_per_sec",
    "status",
]

SUMMARY_COLUMNS = [
    "encoding",
    "head",
    "config_index",
    "f1",
    "detection_rate",
    "false_alarm_rate",
    "parameter_count",
    "train_flows_per_sec",
    "infer_flows_per_sec",
    "status",
]


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export(store: ResultsStore, out_dir: str | Path | None = None) -> tuple[Path, Path]:
    """Write runs.csv (one row per run) and summary.csv (best per encoding/head).

    Output is deterministic: rows are sorted and floats rendered with repr,
    so re-exporting the same store is byte-identical.
    """
    records = store.records()
    if not records:
        raise ExperimentError("results store is empty")
    out_dir = Path(out_dir) if out_dir is not None else store.directory
    out_dir.mkdir(parents=True, exist_ok=True)

    runs_path = out_dir / "runs.csv"
    rows = sorted(records, key=lambda r: (r["config_index"], r["repeat"]))
    with runs_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(EXPORT_COLUMNS)
        for record in rows:
            writer.writerow([_format_cell(record.get(c)) for c in EXPORT_COLUMNS])

    summary_path = out_dir / "summary.csv"
    best = store.best_per_config()
    groups: dict[tuple[str, str], dict] = {}
    for record in best.values():
        key = (record["encoding"], record["head"])
        incumbent = groups.get(key)
        f1 = record.get("f1")
        score = -1.0 if f1 is None or record["status"] != "ok" else f1
        if incumbent is None or score > incumbent[0]:
            groups[key] = (score, record)
    with summary_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for key in sorted(groups):
            record = groups[key][1]
            writer.writerow([_format_cell(record.get(c)) for c in SUMMARY_COLUMNS])
    return runs_path, summary_path


# -- running -------------------------------------------------------------------


@dataclass
class PreparedData:
    """Ingested, split, fitted, and windowed data shared by all grid cells."""

    spec: DatasetSpec
    states: dict[CategoricalFormat, PreprocessorState]
    train_windows: dict[CategoricalFormat, WindowSet]
    eval_windows: dict[CategoricalFormat, WindowSet]


def prepare(
    spec: DatasetSpec,
    table: FlowTable,
    formats: Iterable[CategoricalFormat],
    *,
    window: int,
    level_budget: int = 32,
    split_cfg: SplitConfig | None = None,
) -> PreparedData:
    train_part, eval_part = split(table, split_cfg)
    states: dict[CategoricalFormat, PreprocessorState] = {}
    train_w: dict[CategoricalFormat, WindowSet] = {}
    eval_w: dict[CategoricalFormat, WindowSet] = {}
    for fmt in formats:
        state = fit(train_part, spec, level_budget=level_budget, categorical_format=fmt)
        states[fmt] = state
        train_w[fmt] = windows(transform(train_part, state), train_part.row_labels(), window)
        eval_w[fmt] = windows(transform(eval_part, state), eval_part.row_labels(), window)
    return PreparedData(spec, states, train_w, eval_w)


def run_one(
    cfg: ModelConfig,
    data: PreparedData,
    protocol: TrainProtocol,
    *,
    measure_timing: bool = True,
) -> dict:
    """Train and evaluate one configuration; never raises on divergence."""
    fmt = cfg.encoder.kind.required_format
    state = data.states[fmt]
    model = build_model(cfg, state)
    history = train(model, data.train_windows[fmt], protocol)
    record: dict = {
        "encoding": cfg.encoder.kind.value,
        "head": cfg.head.kind.value,
        "block": cfg.transformer.block.value,
        "layers": cfg.transformer.layers,
        "ff_dim": cfg.transformer.ff_dim,
        "heads": cfg.transformer.heads,
        "d_model": cfg.encoder.resulting_width(state),
        "window": cfg.window,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "parameter_count": model.count_parameters(),
        "epochs_run": history.epochs_run,
        "best_epoch": history.best_epoch,
        "status": history.status,
        "train_flows_per_sec": training_throughput_from_history(history, cfg.batch_size),
        "f1": None,
        "detection_rate": None,
        "false_alarm_rate": None,
        "tp": None,
        "tn": None,
        "fp": None,
        "fn": None,
        "infer_flows_per_sec": None,
    }
    if history.status == "ok":
        metrics = evaluate(model, data.eval_windows[fmt])
        record.update(
            f1=metrics.f1,
            detection_rate=metrics.detection_rate,
            false_alarm_rate=metrics.false_alarm_rate,
            tp=metrics.tp,
            tn=metrics.tn,
            fp=metrics.fp,
            fn=metrics.fn,
        )
        if measure_timing:
            result = measure_inference_throughput(
                model, data.eval_windows[fmt], seed=cfg.seed
            )
            record["infer_flows_per_sec"] = result.flows_per_sec
    return record


def run_grid(
    space: SearchSpace,
    spec: DatasetSpec,
    table: FlowTable,
    protocol: TrainProtocol,
    store: ResultsStore,
    *,
    level_budget: int = 32,
    measure_timing: bool = False,
    limit: int | None = None,
) -> ResultsStore:
    """Execute every (config, repeat) cell not already in the store.

    `limit` caps the number of cells executed this call (used to exercise
    interrupt/resume); completed cells are identified by (config_index,
    repeat) and never re-run.
    """
    formats = {kind.required_format for kind in space.encodings}
    data = prepare(spec, table, formats, window=space.window, level_budget=level_budget)
    expanded = expand(space, data.states)
    done = store.completed_keys()
    executed = 0
    for cell in expanded.cells:
        for repeat in range(space.repeats):
            if (cell.index, repeat) in done:
                continue
            if limit is not None and executed >= limit:
                return store
            seed = derive_seed(space.root_seed, cell.index, repeat)
            cfg = replace(cell.config, seed=seed)
            record = run_one(cfg, data, protocol, measure_timing=measure_timing)
            record["config_index"] = cell.index
            record["repeat"] = repeat
            store.append(record)
            executed += 1
    return store
