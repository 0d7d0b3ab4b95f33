"""Dataset specification: which columns are categorical, numerical, and the class label.

A spec file is a small YAML document (``version: 1``) that declares the
feature columns of a tabular flow dataset.  Everything downstream (ingest,
preprocessing, encoding) is driven by this declaration, so new flow formats
need a spec file and no code changes.

Spec file format::

    version: 1
    name: nf-example
    categorical_features: [PROTOCOL, L4_SRC_PORT, L4_DST_PORT]
    numerical_features: [IN_BYTES, OUT_BYTES, IN_PKTS, OUT_PKTS]
    class_column: Label
    benign_label: Benign

The class column is read as text and compared case-sensitively against
``benign_label``; every other value is treated as malicious.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import yaml

SPEC_VERSION = 1


class SchemaError(ValueError):
    """Raised for malformed or inconsistent dataset spec documents."""


class FeatureKind(enum.Enum):
    CATEGORICAL = "categorical"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class DatasetSpec:
    """Immutable declaration of a tabular flow dataset's columns.

    Feature order is significant: preprocessing and encoding emit columns
    in the declared order.
    """

    name: str
    categorical_features: tuple[str, ...]
    numerical_features: tuple[str, ...]
    class_column: str
    benign_label: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "categorical_features", tuple(self.categorical_features))
        object.__setattr__(self, "numerical_features", tuple(self.numerical_features))
        _validate(self)

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return self.categorical_features + self.numerical_features

    def kind_of(self, column: str) -> FeatureKind:
        if column in self.categorical_features:
            return FeatureKind.CATEGORICAL
        if column in self.numerical_features:
            return FeatureKind.NUMERICAL
        raise SchemaError(f"column {column!r} not declared in spec {self.name!r}")


def _validate(spec: DatasetSpec) -> None:
    if not spec.name:
        raise SchemaError("spec name must be non-empty")
    if not spec.class_column:
        raise SchemaError("class_column must be non-empty")
    if not spec.benign_label:
        raise SchemaError("benign_label must be non-empty")
    overlap = set(spec.categorical_features) & set(spec.numerical_features)
    if overlap:
        raise SchemaError(
            "columns declared both categorical and numerical: "
            + ", ".join(sorted(overlap))
        )
    if not spec.categorical_features and not spec.numerical_features:
        raise SchemaError("at least one feature list must be non-empty")
    for listed in (spec.categorical_features, spec.numerical_features):
        dupes = {c for c in listed if listed.count(c) > 1}
        if dupes:
            raise SchemaError("duplicated feature columns: " + ", ".join(sorted(dupes)))
    if spec.class_column in spec.feature_columns:
        raise SchemaError(
            f"class column {spec.class_column!r} may not appear in a feature list"
        )


def load_spec(path: str | Path) -> DatasetSpec:
    """Load and validate a dataset spec document.

    Raises SchemaError with line context for unparseable YAML, and for
    documents that violate the spec invariants (overlapping lists, missing
    keys, unsupported version).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read spec file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        where = ""
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            where = f" (line {mark.line + 1}, column {mark.column + 1})"
        raise SchemaError(f"malformed spec document {path}{where}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"spec document {path} must be a mapping, got {type(doc).__name__}")
    version = doc.get("version")
    if version != SPEC_VERSION:
        raise SchemaError(f"unsupported spec version {version!r} (expected {SPEC_VERSION})")
    missing = [k for k in ("name", "class_column", "benign_label") if k not in doc]
    if missing:
        raise SchemaError(f"spec document missing keys: {', '.join(missing)}")

    def _as_list(key: str) -> tuple[str, ...]:
        value = doc.get(key) or []
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise SchemaError(f"{key} must be a list of column names")
        return tuple(value)

    return DatasetSpec(
        name=str(doc["name"]),
        categorical_features=_as_list("categorical_features"),
        numerical_features=_as_list("numerical_features"),
        class_column=str(doc["class_column"]),
        benign_label=str(doc["benign_label"]),
    )


def save_spec(spec: DatasetSpec, path: str | Path) -> None:
    """Write a spec document that ``load_spec`` reads back identically."""
    doc = {
        "version": SPEC_VERSION,
        "name": spec.name,
        "categorical_features": list(spec.categorical_features),
        "numerical_features": list(spec.numerical_features),
        "class_column": spec.class_column,
        "benign_label": spec.benign_label,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True))


def validate_against_header(spec: DatasetSpec, header: list[str]) -> None:
    """Check that every declared column exists in the data file header.

    Extra undeclared columns in the header are ignored by design; real flow
    exports carry fields the spec does not use.  All missing columns are
    reported in one error.
    """
    present = set(header)
    declared = list(spec.feature_columns) + [spec.class_column]
    absent = [c for c in declared if c not in present]
    if absent:
        raise SchemaError(
            f"data file is missing columns declared by spec {spec.name!r}: "
            + ", ".join(absent)
        )
