"""CLI surface: subcommands, file outputs, exit codes."""

from __future__ import annotations

import csv
import json

import pytest
import yaml

from flowformer.cli import EXIT_DIVERGED, EXIT_OK, EXIT_VALIDATION, main


@pytest.fixture()
def dataset(tmp_path):
    spec_path = tmp_path / "spec.yaml"
    data_path = tmp_path / "data.csv"
    code = main(
        [
            "synth",
            "--task", "last_flow_separable",
            "--rows", "900",
            "--seed", "4",
            "--categorical", "4",
            "--numerical", "8",
            "--levels", "8",
            "--positive-rate", "0.4",
            "--out-spec", str(spec_path),
            "--out-data", str(data_path),
        ]
    )
    assert code == EXIT_OK
    return spec_path, data_path


def run_config(tmp_path, **overrides):
    doc = {
        "version": 1,
        "window": 4,
        "encoding": "record_projection",
        "d_model": 16,
        "block": "decoder",
        "layers": 1,
        "heads": 2,
        "ff_dim": 16,
        "head": "last_token",
        "mlp_hidden": [8],
        "learning_rate": 0.003,
        "batch_size": 64,
        "seed": 5,
        "max_epochs": 2,
        "patience": 5,
        "level_budget": 8,
        "timing": False,
    }
    doc.update(overrides)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_spec_validate_ok(dataset, capsys):
    spec_path, data_path = dataset
    assert main(["spec", "validate", str(spec_path), str(data_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ok" in out


def test_spec_validate_rejects_missing_column(dataset, tmp_path, capsys):
    spec_path, data_path = dataset
    doc = yaml.safe_load(spec_path.read_text())
    doc["numerical_features"].append("NOT_A_COLUMN")
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(doc))
    assert main(["spec", "validate", str(bad), str(data_path)]) == EXIT_VALIDATION
    assert "NOT_A_COLUMN" in capsys.readouterr().err


def test_ingest_stats(dataset, capsys):
    spec_path, data_path = dataset
    assert main(["ingest", "stats", str(spec_path), str(data_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "rows: 900" in out
    assert "cleaned values: 0" in out


def test_preprocess_fit_and_transform(dataset, tmp_path, capsys):
    spec_path, data_path = dataset
    state_path = tmp_path / "state.json"
    out_path = tmp_path / "matrix.npz"
    assert (
        main(
            ["preprocess", "fit", str(spec_path), str(data_path), "--out", str(state_path), "--levels", "8"]
        )
        == EXIT_OK
    )
    assert state_path.exists()
    assert (
        main(
            [
                "preprocess", "transform", str(spec_path), str(data_path),
                "--state", str(state_path), "--out", str(out_path),
            ]
        )
        == EXIT_OK
    )
    import numpy as np

    bundle = np.load(out_path)
    assert bundle["features"].shape[0] == 900
    assert bundle["labels"].shape == (900,)


def test_run_writes_store_and_export(dataset, tmp_path, capsys):
    spec_path, data_path = dataset
    store = tmp_path / "store"
    code = main(
        [
            "run",
            "--spec", str(spec_path),
            "--data", str(data_path),
            "--config", str(run_config(tmp_path)),
            "--store", str(store),
        ]
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    payload = json.loads(out.strip().splitlines()[-1])
    assert payload["status"] == "ok"
    rows = list(csv.DictReader((store / "runs.csv").open()))
    assert len(rows) == 1
    assert rows[0]["status"] == "ok"
    assert (store / "summary.csv").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_diverged_exit_code(dataset, tmp_path):
    spec_path, data_path = dataset
    store = tmp_path / "store"
    code = main(
        [
            "run",
            "--spec", str(spec_path),
            "--data", str(data_path),
            "--config", str(run_config(tmp_path, learning_rate=1e12)),
            "--store", str(store),
        ]
    )
    assert code == EXIT_DIVERGED


def test_grid_and_report(dataset, tmp_path, capsys):
    spec_path, data_path = dataset
    store = tmp_path / "store"
    space = tmp_path / "space.yaml"
    space.write_text(
        yaml.safe_dump(
            {
                "blocks": ["decoder"],
                "layers": [1],
                "ff_dims": [16],
                "heads": [2],
                "learning_rates": [0.003],
                "encodings": ["record_projection"],
                "head_kinds": ["last_token"],
                "repeats": 2,
                "window": 4,
                "d_model": 16,
                "batch_size": 64,
                "max_epochs": 2,
                "level_budget": 8,
                "timing": False,
            }
        )
    )
    code = main(
        [
            "grid",
            "--spec", str(spec_path),
            "--data", str(data_path),
            "--space", str(space),
            "--store", str(store),
        ]
    )
    assert code == EXIT_OK
    rows = list(csv.DictReader((store / "runs.csv").open()))
    assert len(rows) == 2

    out_dir = tmp_path / "report"
    assert main(["report", "--store", str(store), "--out", str(out_dir)]) == EXIT_OK
    assert (out_dir / "runs.csv").exists() and (out_dir / "summary.csv").exists()


def test_report_empty_store_is_validation_error(tmp_path):
    assert main(["report", "--store", str(tmp_path / "empty")]) == EXIT_VALIDATION


def test_synth_infeasible_is_validation_error(tmp_path):
    code = main(
        [
            "synth",
            "--task", "noise",
            "--rows", "10",
            "--out-spec", str(tmp_path / "s.yaml"),
            "--out-data", str(tmp_path / "d.csv"),
        ]
    )
    assert code == EXIT_VALIDATION
