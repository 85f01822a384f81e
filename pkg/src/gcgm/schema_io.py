"""Dataset loading: a numeric CSV plus a JSON schema describing each column.

Schema file format (JSON array, one object per CSV column, in header order)::

    [
      {"name": "Age", "abbrev": "Age", "type": "DiscreteOrdinal", "treat_as": "Continuous"},
      {"name": "Sex", "abbrev": "Sex", "type": "Binary"},
      {"name": "Stage", "abbrev": "stage", "type": "DiscreteOrdinal", "group": true}
    ]

``type`` is one of ``Continuous``, ``DiscreteOrdinal`` or ``Binary``.
``treat_as`` optionally overrides the modeling type (only ``Continuous`` or
``DiscreteOrdinal``).  Columns flagged ``group`` are not modeled; they hold
row labels (which may be non-numeric) used by :func:`split_by_group`.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateColumn,
    GroupTooSmall,
    MissingCell,
    NonNumericCell,
    SchemaMismatch,
)

MIN_ROWS = 10
MIN_GROUP_ROWS = 10

_MISSING_TOKENS = {"", "na", "nan", "null", "none", "."}


class VarType(str, enum.Enum):
    CONTINUOUS = "Continuous"
    DISCRETE_ORDINAL = "DiscreteOrdinal"
    BINARY = "Binary"

    @classmethod
    def parse(cls, raw: str) -> "VarType":
        key = str(raw).replace("_", "").replace("-", "").replace(" ", "").lower()
        aliases = {
            "continuous": cls.CONTINUOUS,
            "discreteordinal": cls.DISCRETE_ORDINAL,
            "ordinal": cls.DISCRETE_ORDINAL,
            "discrete": cls.DISCRETE_ORDINAL,
            "binary": cls.BINARY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise SchemaMismatch(f"unknown variable type {raw!r}") from None


@dataclass(frozen=True)
class VariableSpec:
    name: str
    abbreviation: str
    var_type: VarType
    treat_as: VarType | None = None
    group_role: bool = False

    @property
    def model_type(self) -> VarType:
        return self.treat_as or self.var_type

    @property
    def is_latent(self) -> bool:
        """True when the column is modeled through the rank likelihood."""
        return self.model_type is not VarType.CONTINUOUS

    def to_json(self) -> dict:
        out = {"name": self.name, "abbrev": self.abbreviation, "type": self.var_type.value}
        if self.treat_as is not None:
            out["treat_as"] = self.treat_as.value
        if self.group_role:
            out["group"] = True
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated observed data.

    ``values`` holds only the modeled columns (n x p).  Group-role columns are
    kept aside in ``groups`` as string labels.
    """

    schema: tuple[VariableSpec, ...]
    values: np.ndarray
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)
    group_specs: tuple[VariableSpec, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise SchemaMismatch(
                f"values shape {values.shape} does not match {len(self.schema)} schema columns"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple(self.schema))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def abbreviations(self) -> list[str]:
        return [v.abbreviation for v in self.schema]

    def column(self, abbrev: str) -> np.ndarray:
        return self.values[:, self.abbreviations.index(abbrev)]

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize back to CSV; floats use ``repr`` so parsing is exact."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        group_names = [g.abbreviation for g in self.group_specs]
        writer.writerow(self.abbreviations + group_names)
        for r in range(self.n):
            row = [repr(float(x)) for x in self.values[r]]
            row += [self.groups[g][r] for g in group_names]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def schema_json(self) -> list[dict]:
        return [v.to_json() for v in self.schema] + [g.to_json() for g in self.group_specs]

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()


def parse_schema(entries: Sequence[dict]) -> list[VariableSpec]:
    specs = []
    seen = set()
    for pos, entry in enumerate(entries, start=1):
        if not isinstance(entry, dict):
            raise SchemaMismatch(f"schema entry {pos} is not an object", column=pos)
        abbrev = str(entry.get("abbrev", entry.get("abbreviation", ""))).strip()
        if not abbrev:
            raise SchemaMismatch(f"schema entry {pos} has an empty abbreviation", column=pos)
        if abbrev in seen:
            raise SchemaMismatch(f"duplicate abbreviation {abbrev!r}", column=pos)
        seen.add(abbrev)
        var_type = VarType.parse(entry.get("type", ""))
        treat_as = entry.get("treat_as")
        treat = VarType.parse(treat_as) if treat_as else None
        if treat is VarType.BINARY and var_type is not VarType.BINARY:
            raise SchemaMismatch(f"{abbrev}: treat_as Binary is only valid for Binary columns", column=pos)
        specs.append(
            VariableSpec(
                name=str(entry.get("name", abbrev)),
                abbreviation=abbrev,
                var_type=var_type,
                treat_as=treat,
                group_role=bool(entry.get("group", entry.get("group_role", False))),
            )
        )
    if not specs:
        raise SchemaMismatch("schema is empty")
    return specs


def load_schema(schema_path: str | Path) -> list[VariableSpec]:
    try:
        entries = json.loads(Path(schema_path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"schema file is not valid JSON: {exc}") from None
    if not isinstance(entries, list):
        raise SchemaMismatch("schema file must contain a JSON array")
    return parse_schema(entries)


def _parse_cell(raw: str, row: int, col: int, abbrev: str) -> float:
    text = raw.strip()
    if text.lower() in _MISSING_TOKENS:
        raise MissingCell(f"missing value at row {row}, column {col} ({abbrev})", row=row, column=col)
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(
            f"non-numeric value {raw!r} at row {row}, column {col} ({abbrev})", row=row, column=col
        ) from None
    if not math.isfinite(value):
        raise NonNumericCell(
            f"non-finite value {raw!r} at row {row}, column {col} ({abbrev})", row=row, column=col
        )
    return value


def validate_columns(schema: Sequence[VariableSpec], values: np.ndarray, col_offset=None):
    """Check the per-column distinctness rules; raise DegenerateColumn."""
    for j, spec in enumerate(schema):
        col_no = col_offset[j] if col_offset is not None else j + 1
        distinct = np.unique(values[:, j]).size
        if distinct < 2:
            raise DegenerateColumn(f"column {col_no} ({spec.abbreviation}) is constant", column=col_no)
        if spec.var_type is VarType.BINARY and distinct != 2:
            raise DegenerateColumn(
                f"binary column {col_no} ({spec.abbreviation}) has {distinct} distinct values",
                column=col_no,
            )
        if spec.model_type is VarType.CONTINUOUS and distinct < 3:
            raise DegenerateColumn(
                f"continuous column {col_no} ({spec.abbreviation}) needs at least 3 distinct values",
                column=col_no,
            )


def build_dataset(
    specs: Sequence[VariableSpec], rows: Sequence[Sequence[str]], allow_empty: bool = False
) -> Dataset:
    """Build a Dataset from parsed schema and raw string rows (header excluded).

    With ``allow_empty`` a header-only file yields a zero-row Dataset instead
    of failing the per-column checks (useful for prior-only computations).
    """
    model_idx = [j for j, s in enumerate(specs) if not s.group_role]
    group_idx = [j for j, s in enumerate(specs) if s.group_role]
    values = np.empty((len(rows), len(model_idx)))
    groups = {specs[j].abbreviation: [] for j in group_idx}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(specs):
            raise SchemaMismatch(
                f"row {r} has {len(row)} cells, expected {len(specs)}", row=r
            )
        for out_j, j in enumerate(model_idx):
            values[r - 1, out_j] = _parse_cell(row[j], r, j + 1, specs[j].abbreviation)
        for j in group_idx:
            label = row[j].strip()
            if label.lower() in _MISSING_TOKENS:
                raise MissingCell(
                    f"missing group label at row {r}, column {j + 1}", row=r, column=j + 1
                )
            groups[specs[j].abbreviation].append(label)
    schema = [specs[j] for j in model_idx]
    if rows or not allow_empty:
        validate_columns(schema, values, col_offset=[j + 1 for j in model_idx])
    return Dataset(
        schema=tuple(schema),
        values=values,
        groups={k: tuple(v) for k, v in groups.items()},
        group_specs=tuple(specs[j] for j in group_idx),
    )


def load_dataset(csv_path: str | Path, schema_path: str | Path, allow_empty: bool = False) -> Dataset:
    """Parse ``csv_path`` against the schema file and return a validated Dataset."""
    specs = load_schema(schema_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("CSV file is empty") from None
        rows = [row for row in reader if row]
    header = [h.strip() for h in header]
    expected = [s.abbreviation for s in specs]
    if header != expected:
        for col, (got, want) in enumerate(zip(header, expected), start=1):
            if got != want:
                raise SchemaMismatch(
                    f"header column {col} is {got!r}, schema expects {want!r}", column=col
                )
        raise SchemaMismatch(
            f"header has {len(header)} columns, schema declares {len(expected)}"
        )
    return build_dataset(specs, rows, allow_empty=allow_empty)


def subset_rows(ds: Dataset, rows: np.ndarray, drop_group: str | None = None) -> Dataset:
    groups = {k: tuple(np.asarray(v, dtype=object)[rows]) for k, v in ds.groups.items() if k != drop_group}
    group_specs = tuple(g for g in ds.group_specs if g.abbreviation != drop_group)
    return Dataset(schema=ds.schema, values=ds.values[rows], groups=groups, group_specs=group_specs)


def split_by_group(ds: Dataset, group_column: str, min_rows: int = MIN_GROUP_ROWS):
    """Split rows by the labels of a group-role column.

    Returns ``[(label, Dataset), ...]`` ordered by first appearance of each
    label.  The returned datasets no longer carry ``group_column``.
    Column validity is re-checked per group, since a column that varies
    overall may be constant within one group.
    """
    if group_column not in ds.groups:
        raise SchemaMismatch(f"{group_column!r} is not a group-role column")
    labels = np.asarray(ds.groups[group_column], dtype=object)
    order = list(dict.fromkeys(labels.tolist()))
    out = []
    for label in order:
        rows = np.flatnonzero(labels == label)
        if rows.size < min_rows:
            raise GroupTooSmall(
                f"group {label!r} has {rows.size} rows, need at least {min_rows}",
                label=label,
                count=int(rows.size),
            )
        part = subset_rows(ds, rows, drop_group=group_column)
        validate_columns(part.schema, part.values)
        out.append((label, part))
    return out


def write_schema(specs: Sequence[VariableSpec], path: str | Path) -> None:
    Path(path).write_text(json.dumps([s.to_json() for s in specs], indent=2) + "\n")
