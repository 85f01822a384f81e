import json
from pathlib import Path

import numpy as np
import pytest

from gcgm.schema_io import Dataset, VariableSpec, VarType

FIXTURES = Path(__file__).parent / "fixtures"
P3_FIXTURES = ["gauss_p3_n50", "gauss_p3_n200", "gauss_p3_n500"]
MIXED_FIXTURE = "mixed_p10_n2000"


def fixture_paths(name):
    return FIXTURES / f"{name}.csv", FIXTURES / f"{name}.schema.json"


def continuous_dataset(values, names=None):
    values = np.asarray(values, dtype=float)
    names = names or [f"X{j + 1}" for j in range(values.shape[1])]
    schema = tuple(VariableSpec(n, n, VarType.CONTINUOUS) for n in names)
    return Dataset(schema=schema, values=values)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_schema(path, entries):
    Path(path).write_text(json.dumps(entries))


def random_spd(rng, p, scale=1.0):
    a = rng.standard_normal((p, p + 2))
    return scale * (a @ a.T / (p + 2) + 0.1 * np.eye(p))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cohort_entries():
    """19 columns: 6 volumes, 6 glucose uptakes, age, education, sex, APOE4,
    amyloid stage and two cognitive scores."""
    entries = [{"name": f"Volume {k}", "abbrev": f"V{k}", "type": "Continuous"} for k in range(1, 7)]
    entries += [{"name": f"Glucose {k}", "abbrev": f"G{k}", "type": "Continuous"} for k in range(1, 7)]
    entries += [
        {"name": "Age", "abbrev": "Age", "type": "DiscreteOrdinal", "treat_as": "Continuous"},
        {"name": "Education", "abbrev": "Educ", "type": "DiscreteOrdinal"},
        {"name": "Sex", "abbrev": "Sex", "type": "Binary"},
        {"name": "APOE4", "abbrev": "APOE4", "type": "Binary"},
        {"name": "Amyloid stage", "abbrev": "Amy-stage", "type": "DiscreteOrdinal"},
        {"name": "Memory", "abbrev": "MEM", "type": "Continuous"},
        {"name": "Executive", "abbrev": "EF", "type": "Continuous"},
    ]
    return entries


def cohort_rows(rng, n):
    rows = []
    for _ in range(n):
        row = [f"{v:.4f}" for v in rng.standard_normal(12)]
        row += [
            str(int(rng.integers(55, 90))),
            str(int(rng.integers(8, 21))),
            str(int(rng.integers(0, 2))),
            str(int(rng.integers(0, 2))),
            str(int(rng.integers(0, 5))),
        ]
        row += [f"{v:.4f}" for v in rng.standard_normal(2)]
        rows.append(row)
    return rows


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
