"""Dataset spec loading, validation, round-trips."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowformer.schema import (
    DatasetSpec,
    FeatureKind,
    SchemaError,
    load_spec,
    save_spec,
    validate_against_header,
)

NF_CATEGORICAL = [
    "PROTOCOL", "L4_SRC_PORT", "L4_DST_PORT", "TCP_FLAGS",
    "L7_PROTO", "CLIENT_TCP_FLAGS", "SERVER_TCP_FLAGS", "ICMP_TYPE",
]
NF_NUMERICAL = [f"COUNTER_{i}" for i in range(39)]


def write_spec(tmp_path, categorical, numerical, name="fixture"):
    path = tmp_path / "spec.yaml"
    save_spec(
        DatasetSpec(name, tuple(categorical), tuple(numerical), "Label", "Benign"),
        path,
    )
    return path


def test_load_netflow_like_spec_counts(tmp_path):
    path = write_spec(tmp_path, NF_CATEGORICAL, NF_NUMERICAL)
    spec = load_spec(path)
    assert len(spec.categorical_features) == 8
    assert len(spec.numerical_features) == 39
    assert len(spec.feature_columns) == 47
    assert spec.class_column == "Label"
    assert spec.benign_label == "Benign"
    # declared order preserved exactly
    assert list(spec.categorical_features) == NF_CATEGORICAL
    assert list(spec.numerical_features) == NF_NUMERICAL


def test_duplicate_column_across_lists_rejected():
    with pytest.raises(SchemaError, match="PROTOCOL"):
        DatasetSpec("x", ("PROTOCOL",), ("PROTOCOL", "BYTES"), "Label", "Benign")


def test_empty_categorical_list_is_valid():
    spec = DatasetSpec("x", (), ("a", "b", "c", "d", "e"), "Label", "Benign")
    assert spec.feature_columns == ("a", "b", "c", "d", "e")


def test_both_lists_empty_rejected():
    with pytest.raises(SchemaError):
        DatasetSpec("x", (), (), "Label", "Benign")


def test_class_column_may_not_be_a_feature():
    with pytest.raises(SchemaError):
        DatasetSpec("x", ("Label",), ("a",), "Label", "Benign")


def test_kind_of():
    spec = DatasetSpec("x", ("p",), ("b",), "Label", "Benign")
    assert spec.kind_of("p") is FeatureKind.CATEGORICAL
    assert spec.kind_of("b") is FeatureKind.NUMERICAL
    with pytest.raises(SchemaError):
        spec.kind_of("Label")


def test_malformed_yaml_reports_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("version: 1\nname: [unclosed\n")
    with pytest.raises(SchemaError, match="line"):
        load_spec(path)


def test_missing_version_rejected(tmp_path):
    path = tmp_path / "nover.yaml"
    path.write_text("name: x\nclass_column: Label\nbenign_label: Benign\n")
    with pytest.raises(SchemaError, match="version"):
        load_spec(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(SchemaError):
        load_spec(tmp_path / "nope.yaml")


def test_header_validation_accepts_subset_and_extras():
    spec = DatasetSpec("x", ("proto",), ("bytes",), "Label", "Benign")
    validate_against_header(spec, ["proto", "bytes", "Label"])
    validate_against_header(spec, ["extra", "Label", "bytes", "proto", "more"])


def test_header_validation_names_all_missing_columns():
    spec = DatasetSpec("x", ("proto",), ("bytes", "pkts"), "Label", "Benign")
    with pytest.raises(SchemaError) as exc:
        validate_against_header(spec, ["bytes", "Label"])
    assert "proto" in str(exc.value) and "pkts" in str(exc.value)


def test_header_validation_order_insensitive():
    spec = DatasetSpec("x", ("a", "b"), ("c",), "Label", "Benign")
    validate_against_header(spec, ["Label", "c", "b", "a"])
    validate_against_header(spec, ["a", "b", "c", "Label"])


_name = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=126, exclude_characters=",#"),
    min_size=1,
    max_size=12,
)


@settings(max_examples=50, deadline=None)
@given(st.lists(_name, min_size=4, max_size=10, unique=True), st.integers(1, 3))
def test_round_trip_is_identity(tmp_path_factory, names, n_cat):
    base = tmp_path_factory.mktemp("roundtrip")
    categorical = tuple(names[:n_cat])
    numerical = tuple(names[n_cat:-1])
    spec = DatasetSpec("rt", categorical, numerical, names[-1], "Benign")
    path = base / "spec.yaml"
    save_spec(spec, path)
    assert load_spec(path) == spec
