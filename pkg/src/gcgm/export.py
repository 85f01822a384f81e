"""File exporters for fitted posteriors: CSV tables, DOT/GraphML networks,
per-pair density tables and the run manifest.

Every numeric CSV field is written with 6 significant digits.  Node and pair
indices in exported files are 1-based, matching CSV column positions.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from importlib import resources
from pathlib import Path

import jsonschema
import networkx as nx
import numpy as np

from .summary import N_BINS, EdgeSummary, Network, PosteriorAccumulator, bin_edges

SIG_DIGITS = 6
EDGE_SUMMARY_COLUMNS = [
    "i", "j", "pair", "probability", "spike_mass", "mean_parcor",
    "mean_parcor_given_edge", "sd_parcor", "ci90_low", "ci90_high",
]


def fmt(x: float) -> str:
    """6-significant-digit text for a float; negative zero prints as ``0``."""
    text = f"{float(x):.{SIG_DIGITS}g}"
    return "0" if text == "-0" else text


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def edge_summary_csv(summaries: list[EdgeSummary], labels) -> str:
    rows = [EDGE_SUMMARY_COLUMNS]
    for s in summaries:
        rows.append(
            [
                str(s.i + 1), str(s.j + 1), f"{labels[s.i]}--{labels[s.j]}",
                fmt(s.probability), fmt(s.spike_mass), fmt(s.mean_parcor),
                fmt(s.mean_parcor_given_edge), fmt(s.sd_parcor), fmt(s.ci90[0]), fmt(s.ci90[1]),
            ]
        )
    return _csv_text(rows)


def read_edge_summary(path) -> list[dict]:
    """Parse an edge_summary.csv back into dicts of floats (indices 0-based)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {k: float(v) for k, v in row.items() if k not in ("i", "j", "pair")}
            rec["i"], rec["j"], rec["pair"] = int(row["i"]) - 1, int(row["j"]) - 1, row["pair"]
            out.append(rec)
    return out


def matrix_csv(matrix: np.ndarray, labels) -> str:
    rows = [[""] + list(labels)]
    for lab, row in zip(labels, np.asarray(matrix)):
        rows.append([lab] + [fmt(v) for v in row])
    return _csv_text(rows)


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    return labels, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def density_csv(acc: PosteriorAccumulator, i: int, j: int) -> str:
    """Posterior mass of the partial correlation for pair ``(i, j)``.

    The first row is the spike at exactly zero (edge absent); the rest are
    the fixed-width histogram bins over ``[-1, 1]``.
    """
    spike, hist = acc.density(i, j)
    edges = bin_edges()
    rows = [["bin", "lower", "upper", "mass"], ["0-spike", "0", "0", fmt(spike)]]
    for b in range(N_BINS):
        rows.append([str(b), fmt(edges[b]), fmt(edges[b + 1]), fmt(hist[b])])
    return _csv_text(rows)


def penwidth(probability: float) -> float:
    """Linear map of inclusion probability ``[0.5, 1] -> [1, 5]``, clamped."""
    return float(min(max(1.0 + 8.0 * (probability - 0.5), 1.0), 5.0))


def _dot_quote(text: str) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(net: Network) -> str:
    """Undirected DOT graph; edge width encodes probability, colour the sign."""
    lines = ["graph gcgm {", "  node [shape=ellipse];"]
    for v, label in enumerate(net.labels):
        lines.append(f"  n{v + 1} [label={_dot_quote(label)}];")
    for e in net.edges:
        attrs = (
            f"penwidth={fmt(penwidth(e.probability))}, color={e.color}, "
            f"probability={fmt(e.probability)}, mean_parcor={fmt(e.mean_parcor)}, sign={e.sign}"
        )
        lines.append(f"  n{e.i + 1} -- n{e.j + 1} [{attrs}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_graphml(net: Network) -> str:
    g = nx.Graph()
    for v, label in enumerate(net.labels):
        g.add_node(f"n{v + 1}", label=str(label))
    for e in net.edges:
        g.add_edge(
            f"n{e.i + 1}",
            f"n{e.j + 1}",
            probability=float(e.probability),
            mean_parcor=float(e.mean_parcor),
            penwidth=penwidth(e.probability),
            color=e.color,
            sign=e.sign,
        )
    return "\n".join(nx.generate_graphml(g)) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def schema_hash(schema_entries) -> str:
    return hashlib.sha256(json.dumps(schema_entries, sort_keys=True).encode()).hexdigest()


def safe_dirname(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(label)).strip("._") or "group"


def manifest_schema() -> dict:
    text = resources.files("gcgm").joinpath("data/manifest.schema.json").read_text()
    return json.loads(text)


def validate_manifest(manifest: dict) -> None:
    """Raise ``jsonschema.ValidationError`` when the manifest is malformed."""
    jsonschema.validate(manifest, manifest_schema())


class OutputWriter:
    """Writes files under one directory and keeps the inventory for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def write(self, relpath: str, text: str) -> Path:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(relpath)
        return path

    def inventory(self) -> list[dict]:
        return [
            {"path": rel, "sha256": sha256_file(self.root / rel), "bytes": (self.root / rel).stat().st_size}
            for rel in self.files
        ]


def write_fit_outputs(
    writer: OutputWriter,
    acc: PosteriorAccumulator,
    summaries: list[EdgeSummary],
    network: Network,
    parcor: np.ndarray,
    pearson: np.ndarray,
    probabilities: np.ndarray,
    labels,
) -> None:
    writer.write("edge_summary.csv", edge_summary_csv(summaries, labels))
    writer.write("parcor_matrix.csv", matrix_csv(parcor, labels))
    writer.write("pearson_matrix.csv", matrix_csv(pearson, labels))
    writer.write("edge_probability_matrix.csv", matrix_csv(probabilities, labels))
    writer.write("network.dot", export_dot(network))
    writer.write("network.graphml", export_graphml(network))
    for s in summaries:
        writer.write(f"densities/{s.i + 1}_{s.j + 1}.csv", density_csv(acc, s.i, s.j))
