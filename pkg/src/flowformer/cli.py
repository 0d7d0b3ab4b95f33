"""Command-line front door.

Subcommands mirror the pipeline stages:

    flowformer spec validate <spec> <data>
    flowformer ingest stats <spec> <data>
    flowformer preprocess fit <spec> <data> --out state.json
    flowformer preprocess transform <spec> <data> --state state.json --out m.npz
    flowformer synth --task marker_at_lag --rows 20000 --seed 7 --out-spec s.yaml --out-data d.csv
    flowformer run --spec s.yaml --data d.csv --config run.yaml --store results/
    flowformer grid --spec s.yaml --data d.csv --space space.yaml --store results/
    flowformer report --store results/ [--out dir]

Exit codes: 0 success, 2 validation error, 3 all runs diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .encoders import EncoderSpec, EncodingKind
from .experiment import (
    ExperimentError,
    ResultsStore,
    SearchSpace,
    export,
    prepare,
    run_grid,
    run_one,
)
from .heads import HeadKind, HeadSpec
from .ingest import IngestError, SplitConfig, SplitMode, load_table, split
from .preprocess import (
    CategoricalFormat,
    PreprocessError,
    fit,
    load_state,
    save_state,
    transform,
)
from .schema import SchemaError, load_spec
from .synthdata import SpecShape, SynthError, SyntheticTask, generate, write_dataset
from .trainer import ModelConfig, TrainProtocol, TrainerError
from .transformer import BlockKind, PositionalMode, TransformerConfig, TransformerError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3

_VALIDATION_ERRORS = (
    SchemaError,
    IngestError,
    PreprocessError,
    TrainerError,
    TransformerError,
    ExperimentError,
    SynthError,
    ValueError,
    OSError,
)


def _load_yaml(path: str) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ExperimentError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ExperimentError(f"config {path} must be a mapping")
    return doc


def _run_config_from_doc(doc: dict) -> tuple[ModelConfig, TrainProtocol, dict]:
    encoding = EncodingKind(doc.get("encoding", "record_projection"))
    encoder = EncoderSpec(
        kind=encoding,
        per_categorical_dim=doc.get("per_categorical_dim"),
        d_model=int(doc.get("d_model", 128)),
    )
    transformer = TransformerConfig(
        block=BlockKind(doc.get("block", "encoder")),
        layers=int(doc.get("layers", 2)),
        d_model=None,
        heads=int(doc.get("heads", 2)),
        ff_dim=int(doc.get("ff_dim", 128)),
        dropout=float(doc.get("dropout", 0.0)),
        positional=PositionalMode(doc.get("positional", "learned")),
    )
    head = HeadSpec(
        kind=HeadKind(doc.get("head", "last_token")),
        mlp_hidden=tuple(doc.get("mlp_hidden", [128])),
    )
    cfg = ModelConfig(
        encoder=encoder,
        transformer=transformer,
        head=head,
        window=int(doc.get("window", 8)),
        learning_rate=float(doc.get("learning_rate", 0.001)),
        batch_size=int(doc.get("batch_size", 128)),
        seed=int(doc.get("seed", 0)),
    )
    protocol = TrainProtocol(
        max_epochs=int(doc.get("max_epochs", 20)),
        patience=int(doc.get("patience", 5)),
    )
    options = {
        "level_budget": int(doc.get("level_budget", 32)),
        "eval_fraction": float(doc.get("eval_fraction", 0.10)),
        "split_mode": SplitMode(doc.get("split_mode", "tail_eval")),
        "timing": bool(doc.get("timing", True)),
    }
    return cfg, protocol, options


def _space_from_doc(doc: dict) -> tuple[SearchSpace, TrainProtocol, dict]:
    space = SearchSpace(
        blocks=tuple(BlockKind(b) for b in doc.get("blocks", ["encoder", "decoder"])),
        layers=tuple(int(x) for x in doc.get("layers", [2, 4, 6, 8])),
        ff_dims=tuple(int(x) for x in doc.get("ff_dims", [128, 256, 512])),
        heads=tuple(int(x) for x in doc.get("heads", [2, 4, 6, 8, 12])),
        learning_rates=tuple(
            float(x) for x in doc.get("learning_rates", [0.01, 0.001, 0.0005, 0.0001, 0.00001])
        ),
        encodings=tuple(EncodingKind(e) for e in doc.get("encodings", ["record_projection"])),
        head_kinds=tuple(HeadKind(h) for h in doc.get("head_kinds", ["last_token"])),
        repeats=int(doc.get("repeats", 3)),
        window=int(doc.get("window", 8)),
        d_model=int(doc.get("d_model", 128)),
        per_categorical_dim=doc.get("per_categorical_dim"),
        batch_size=int(doc.get("batch_size", 128)),
        positional=PositionalMode(doc.get("positional", "learned")),
        root_seed=int(doc.get("seed", 0)),
    )
    protocol = TrainProtocol(
        max_epochs=int(doc.get("max_epochs", 20)),
        patience=int(doc.get("patience", 5)),
    )
    options = {
        "level_budget": int(doc.get("level_budget", 32)),
        "timing": bool(doc.get("timing", False)),
        "limit": doc.get("limit"),
    }
    return space, protocol, options


# -- subcommand handlers ---------------------------------------------------


def _cmd_spec_validate(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    print(f"spec {spec.name!r} ok: {len(spec.feature_columns)} feature columns")
    print(f"data ok: {table.row_count} rows")
    return EXIT_OK


def _cmd_ingest_stats(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    labels = table.row_labels()
    print(f"rows: {table.row_count}")
    print(f"benign: {int((labels == 0).sum())}  malicious: {int((labels == 1).sum())}")
    print(f"cleaned values: {table.cleaning.total}")
    for name, count in sorted(table.cleaning.numerical_replacements.items()):
        if count:
            print(f"  numerical {name}: {count} replaced with 0.0")
    for name, count in sorted(table.cleaning.categorical_missing.items()):
        if count:
            print(f"  categorical {name}: {count} missing -> __missing__")
    return EXIT_OK


def _cmd_preprocess_fit(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    train_part, _ = split(table, SplitConfig(SplitMode(args.split_mode), args.eval_fraction))
    state = fit(
        train_part,
        spec,
        level_budget=args.levels,
        categorical_format=CategoricalFormat(args.format),
    )
    save_state(state, args.out)
    print(f"fitted state written to {args.out}")
    return EXIT_OK


def _cmd_preprocess_transform(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    state = load_state(args.state)
    matrix = transform(table, state)
    np.savez(args.out, features=matrix, labels=table.row_labels())
    print(f"transformed {matrix.shape[0]} rows x {matrix.shape[1]} columns -> {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    shape = SpecShape(
        n_categorical=args.categorical,
        n_numerical=args.numerical,
        levels=args.levels,
    )
    spec, table = generate(
        SyntheticTask(args.task),
        rows=args.rows,
        shape=shape,
        seed=args.seed,
        lag=args.lag,
        positive_rate=args.positive_rate,
    )
    write_dataset(spec, table, args.out_spec, args.out_data)
    print(f"wrote {args.out_spec} and {args.out_data} ({table.row_count} rows)")
    return EXIT_OK


def _cmd_run(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    cfg, protocol, options = _run_config_from_doc(_load_yaml(args.config))
    data = prepare(
        spec,
        table,
        [cfg.encoder.kind.required_format],
        window=cfg.window,
        level_budget=options["level_budget"],
        split_cfg=SplitConfig(options["split_mode"], options["eval_fraction"]),
    )
    record = run_one(cfg, data, protocol, measure_timing=options["timing"])
    record["config_index"] = 0
    record["repeat"] = args.repeat
    store = ResultsStore(args.store)
    store.append(record)
    export(store)
    print(json.dumps({k: record[k] for k in ("status", "f1", "parameter_count", "epochs_run")}))
    if record["status"] != "ok":
        print("run diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_grid(args) -> int:
    spec = load_spec(args.spec)
    table = load_table(args.data, spec, delimiter=args.delimiter)
    space, protocol, options = _space_from_doc(_load_yaml(args.space))
    store = ResultsStore(args.store)
    run_grid(
        space,
        spec,
        table,
        protocol,
        store,
        level_budget=options["level_budget"],
        measure_timing=options["timing"],
        limit=options["limit"],
    )
    export(store)
    best = store.best_per_config()
    if best and all(record["status"] != "ok" for record in best.values()):
        print("all runs diverged", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"grid complete: {len(store.records())} runs in {store.path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    store = ResultsStore(args.store)
    runs_path, summary_path = export(store, args.out)
    print(f"wrote {runs_path} and {summary_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_io(p, with_delim=True):
        p.add_argument("spec", help="dataset spec YAML")
        p.add_argument("data", help="delimited data file")
        if with_delim:
            p.add_argument("--delimiter", default=",")

    p_spec = sub.add_parser("spec", help="dataset spec tools")
    spec_sub = p_spec.add_subparsers(dest="subcommand", required=True)
    p_validate = spec_sub.add_parser("validate", help="validate spec against a data file")
    add_io(p_validate)
    p_validate.set_defaults(handler=_cmd_spec_validate)

    p_ingest = sub.add_parser("ingest", help="ingestion tools")
    ingest_sub = p_ingest.add_subparsers(dest="subcommand", required=True)
    p_stats = ingest_sub.add_parser("stats", help="row counts and cleaning statistics")
    add_io(p_stats)
    p_stats.set_defaults(handler=_cmd_ingest_stats)

    p_pre = sub.add_parser("preprocess", help="fit / transform features")
    pre_sub = p_pre.add_subparsers(dest="subcommand", required=True)
    p_fit = pre_sub.add_parser("fit")
    add_io(p_fit)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--levels", type=int, default=32)
    p_fit.add_argument("--format", choices=[f.value for f in CategoricalFormat], default="one_hot")
    p_fit.add_argument("--split-mode", default="tail_eval", dest="split_mode")
    p_fit.add_argument("--eval-fraction", type=float, default=0.10, dest="eval_fraction")
    p_fit.set_defaults(handler=_cmd_preprocess_fit)
    p_tr = pre_sub.add_parser("transform")
    add_io(p_tr)
    p_tr.add_argument("--state", required=True)
    p_tr.add_argument("--out", required=True)
    p_tr.set_defaults(handler=_cmd_preprocess_transform)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--task", choices=[t.value for t in SyntheticTask], required=True)
    p_synth.add_argument("--rows", type=int, required=True)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--lag", type=int, default=4)
    p_synth.add_argument("--positive-rate", type=float, default=0.35, dest="positive_rate")
    p_synth.add_argument("--categorical", type=int, default=8)
    p_synth.add_argument("--numerical", type=int, default=30)
    p_synth.add_argument("--levels", type=int, default=40)
    p_synth.add_argument("--out-spec", required=True, dest="out_spec")
    p_synth.add_argument("--out-data", required=True, dest="out_data")
    p_synth.set_defaults(handler=_cmd_synth)

    p_run = sub.add_parser("run", help="train and evaluate one configuration")
    p_run.add_argument("--spec", required=True)
    p_run.add_argument("--data", required=True)
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--store", required=True)
    p_run.add_argument("--repeat", type=int, default=0)
    p_run.add_argument("--delimiter", default=",")
    p_run.set_defaults(handler=_cmd_run)

    p_grid = sub.add_parser("grid", help="run a hyperparameter grid")
    p_grid.add_argument("--spec", required=True)
    p_grid.add_argument("--data", required=True)
    p_grid.add_argument("--space", required=True)
    p_grid.add_argument("--store", required=True)
    p_grid.add_argument("--delimiter", default=",")
    p_grid.set_defaults(handler=_cmd_grid)

    p_report = sub.add_parser("report", help="export tables from a results store")
    p_report.add_argument("--store", required=True)
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(handler=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
