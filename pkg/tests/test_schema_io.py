import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcgm.errors import DegenerateColumn, GroupTooSmall, MissingCell, NonNumericCell, SchemaMismatch
from gcgm.schema_io import VarType, build_dataset, load_dataset, parse_schema, split_by_group

from conftest import cohort_entries, cohort_rows, write_csv, write_schema

SMALL_SCHEMA = [
    {"name": "Age", "abbrev": "Age", "type": "DiscreteOrdinal", "treat_as": "Continuous"},
    {"name": "Sex", "abbrev": "Sex", "type": "Binary"},
    {"name": "Memory", "abbrev": "MEM", "type": "Continuous"},
]


def _load(tmp_path, header, rows, schema):
    write_csv(tmp_path / "d.csv", header, rows)
    write_schema(tmp_path / "s.json", schema)
    return load_dataset(tmp_path / "d.csv", tmp_path / "s.json")


def test_four_row_csv(tmp_path):
    rows = [[71, 0, 0.3], [65, 1, -1.2], [80, 1, 0.8], [74, 0, 0.1]]
    ds = _load(tmp_path, ["Age", "Sex", "MEM"], rows, SMALL_SCHEMA)
    assert (ds.n, ds.p) == (4, 3)
    assert ds.schema[0].var_type is VarType.DISCRETE_ORDINAL
    assert ds.schema[0].model_type is VarType.CONTINUOUS
    assert not ds.schema[0].is_latent and ds.schema[1].is_latent
    # row order preserved
    np.testing.assert_array_equal(ds.column("Age"), [71, 65, 80, 74])


def test_constant_column_rejected(tmp_path):
    rows = [[71, 0, 0.5], [65, 1, 0.5], [80, 1, 0.5], [74, 0, 0.5]]
    with pytest.raises(DegenerateColumn) as err:
        _load(tmp_path, ["Age", "Sex", "MEM"], rows, SMALL_SCHEMA)
    assert err.value.context["column"] == 3


def test_nineteen_variable_schema(tmp_path, rng):
    entries = cohort_entries()
    ds = _load(tmp_path, [e["abbrev"] for e in entries], cohort_rows(rng, 40), entries)
    assert ds.p == 19
    assert ds.p * (ds.p - 1) // 2 == 171
    kinds = [s.var_type for s in ds.schema]
    assert kinds.count(VarType.CONTINUOUS) == 14
    assert kinds.count(VarType.BINARY) == 2
    assert kinds.count(VarType.DISCRETE_ORDINAL) == 3


def test_missing_cell_reports_position(tmp_path):
    rows = [[71, 0, 0.3], [65, "", -1.2], [80, 1, 0.8]]
    with pytest.raises(MissingCell) as err:
        _load(tmp_path, ["Age", "Sex", "MEM"], rows, SMALL_SCHEMA)
    assert (err.value.context["row"], err.value.context["column"]) == (2, 2)


def test_non_numeric_cell(tmp_path):
    rows = [[71, 0, 0.3], [65, 1, "abc"], [80, 1, 0.8]]
    with pytest.raises(NonNumericCell) as err:
        _load(tmp_path, ["Age", "Sex", "MEM"], rows, SMALL_SCHEMA)
    assert (err.value.context["row"], err.value.context["column"]) == (2, 3)


def test_header_mismatch(tmp_path):
    rows = [[71, 0, 0.3], [65, 1, -1.2], [80, 1, 0.8]]
    with pytest.raises(SchemaMismatch) as err:
        _load(tmp_path, ["Age", "Gender", "MEM"], rows, SMALL_SCHEMA)
    assert err.value.context["column"] == 2


def test_binary_needs_two_values(tmp_path):
    rows = [[71, 0, 0.3], [65, 1, -1.2], [80, 2, 0.8]]
    with pytest.raises(DegenerateColumn):
        _load(tmp_path, ["Age", "Sex", "MEM"], rows, SMALL_SCHEMA)


def test_duplicate_abbreviation():
    with pytest.raises(SchemaMismatch):
        parse_schema([{"abbrev": "A", "type": "Continuous"}, {"abbrev": "A", "type": "Binary"}])


def _staged(rng, counts):
    entries = [
        {"abbrev": "X", "type": "Continuous"},
        {"abbrev": "Y", "type": "Continuous"},
        {"abbrev": "stage", "type": "DiscreteOrdinal", "group": True},
    ]
    labels = [lab for lab, c in counts.items() for _ in range(c)]
    labels = list(np.asarray(labels, dtype=object)[rng.permutation(len(labels))])
    rows = [[f"{rng.standard_normal():.6f}", f"{rng.standard_normal():.6f}", lab] for lab in labels]
    return build_dataset(parse_schema(entries), rows)


def test_split_by_stage(rng):
    counts = {"CN": 345, "EMCI": 297, "LMCI": 205, "AD": 175}
    ds = _staged(rng, counts)
    assert ds.n == 1022
    parts = dict(split_by_group(ds, "stage"))
    assert {k: v.n for k, v in parts.items()} == counts
    for part in parts.values():
        assert part.abbreviations == ["X", "Y"]
        assert "stage" not in part.groups
    # union of rows is the original data
    stacked = np.vstack([v.values for v in parts.values()])
    assert sorted(map(tuple, stacked)) == sorted(map(tuple, ds.values))


def test_single_valued_group(rng):
    ds = _staged(rng, {"CN": 30})
    ((label, part),) = split_by_group(ds, "stage")
    assert label == "CN"
    np.testing.assert_array_equal(part.values, ds.values)
    assert part.schema == ds.schema


def test_group_too_small(rng):
    ds = _staged(rng, {"CN": 30, "AD": 5})
    with pytest.raises(GroupTooSmall) as err:
        split_by_group(ds, "stage")
    assert err.value.context == {"label": "AD", "count": 5}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c"]), min_size=30, max_size=60))
def test_split_partitions_rows(labels):
    rng = np.random.default_rng(len(labels))
    entries = [{"abbrev": "X", "type": "Continuous"}, {"abbrev": "Y", "type": "Continuous"},
               {"abbrev": "g", "type": "Binary", "group": True}]
    rows = [[f"{v:.6f}", f"{w:.6f}", lab] for (v, w), lab in zip(rng.standard_normal((len(labels), 2)), labels)]
    ds = build_dataset(parse_schema(entries), rows)
    try:
        parts = split_by_group(ds, "g", min_rows=1)
    except DegenerateColumn:
        return
    assert sum(part.n for _, part in parts) == ds.n
    assert [lab for lab, _ in parts] == list(dict.fromkeys(labels))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_csv_round_trip(n, p, seed):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((n, p)) * 10.0 ** rng.integers(-8, 8, size=p)
    entries = [{"abbrev": f"c{j}", "type": "Continuous"} for j in range(p)]
    specs = parse_schema(entries)
    ds = build_dataset(specs, [[repr(float(v)) for v in row] for row in values])
    text = ds.to_csv()
    rows = [line.split(",") for line in text.strip().split("\n")[1:]]
    again = build_dataset(specs, rows)
    np.testing.assert_array_equal(again.values, ds.values)
    assert again.content_hash() == ds.content_hash()
