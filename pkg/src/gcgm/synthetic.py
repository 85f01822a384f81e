"""Synthetic ground truth, the exact three-variable posterior and recovery scores."""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp, ndtri
from scipy.stats import rankdata

from .copula import continuous_transform
from .errors import UnsupportedDimension
from .gwishart import Graph, GWishartParams, all_pairs, log_marginal_likelihood_decomposable, sample_gwishart
from .mcmc import McmcConfig, log_graph_prior, sample_chain
from .schema_io import Dataset, VariableSpec, VarType

DISTORTIONS = {
    "identity": lambda x: x,
    "exp": np.exp,
    "cubic": lambda x: x**3 + x,
    "sigmoid": lambda x: expit(2.0 * x),
}


def parse_column_plan(entry: str) -> tuple[str, int]:
    """``"identity"``, ``"exp"``, ``"cubic"``, ``"sigmoid"``, ``"ordinal:k"`` or ``"binary"``."""
    name, _, arg = entry.partition(":")
    name = name.strip().lower()
    if name == "ordinal":
        k = int(arg) if arg else 5
        if k < 2:
            raise ValueError("ordinal columns need at least 2 bins")
        return "ordinal", k
    if name == "binary":
        return "binary", 2
    if name not in DISTORTIONS:
        raise ValueError(f"unknown column plan {entry!r}")
    return name, 0


@dataclass
class SyntheticSpec:
    p: int
    n: int
    edge_density: float
    graph_seed: int = 0
    data_seed: int = 0
    column_plan: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if not 0.0 <= self.edge_density < 1.0:
            raise ValueError("edge_density must lie in [0, 1)")
        if not self.column_plan:
            self.column_plan = ["identity"] * self.p
        if len(self.column_plan) != self.p:
            raise ValueError("column_plan must have one entry per variable")
        for entry in self.column_plan:
            parse_column_plan(entry)

    def to_dict(self) -> dict:
        return asdict(self)


def _apply_plan(latent: np.ndarray, sd: float, entry: str) -> tuple[np.ndarray, VarType]:
    kind, k = parse_column_plan(entry)
    if kind == "ordinal":
        cuts = ndtri(np.arange(1, k) / k) * sd
        return np.searchsorted(cuts, latent).astype(float), VarType.DISCRETE_ORDINAL
    if kind == "binary":
        return (latent > 0).astype(float), VarType.BINARY
    return DISTORTIONS[kind](latent), VarType.CONTINUOUS


def generate(spec: SyntheticSpec):
    """Draw ``(Dataset, true Graph, true K)`` from the copula graphical model.

    The graph is Erdos-Renyi with the given density, ``K ~ W_G(3, I)``, rows
    are ``N(0, K^{-1})`` and each column is pushed through its planned
    marginal.  Ordinal bins cut the latent column at equal-probability
    quantiles; binary columns threshold at zero.
    """
    grng = np.random.default_rng(spec.graph_seed)
    pairs = all_pairs(spec.p)
    keep = grng.random(len(pairs)) < spec.edge_density
    g = Graph(spec.p, [pr for pr, k in zip(pairs, keep) if k])
    K = sample_gwishart(g, GWishartParams.default(spec.p), grng, method="exact")
    drng = np.random.default_rng(spec.data_seed)
    chol = np.linalg.cholesky(K)
    eps = drng.standard_normal((spec.n, spec.p))
    # rows ~ N(0, K^{-1}) since K = L L'
    latent = np.linalg.solve(chol.T, eps.T).T
    sd = np.sqrt(np.diag(np.linalg.inv(K)))
    cols, schema = [], []
    for j, entry in enumerate(spec.column_plan):
        col, vt = _apply_plan(latent[:, j], sd[j], entry)
        cols.append(col)
        schema.append(VariableSpec(name=f"X{j + 1}", abbreviation=f"X{j + 1}", var_type=vt))
    ds = Dataset(schema=tuple(schema), values=np.column_stack(cols))
    return ds, g, K


def oracle_scores(data) -> np.ndarray:
    """Normal scores the oracle conditions on: the rank transform of an
    all-continuous Dataset, or an ``n x 3`` array of latent values as given."""
    if isinstance(data, Dataset):
        return np.column_stack([continuous_transform(data.values[:, j]) for j in range(data.p)])
    return np.asarray(data, dtype=float).reshape(-1, 3)


def exact_graph_posterior(S, n: int, edge_prior: float, params: GWishartParams):
    """Posterior probability of each of the 8 graphs on three nodes.

    Returns ``(graphs, probabilities, log_weights)``.
    """
    if params.p != 3:
        raise UnsupportedDimension("exact enumeration is implemented for p = 3 only", p=params.p)
    pairs = all_pairs(3)
    graphs, logw = [], []
    for bits in itertools.product((0, 1), repeat=3):
        g = Graph(3, [pr for pr, b in zip(pairs, bits) if b])
        graphs.append(g)
        logw.append(log_marginal_likelihood_decomposable(g, params, S, n) + log_graph_prior(g, edge_prior))
    logw = np.array(logw)
    return graphs, np.exp(logw - logsumexp(logw)), logw


def exact_posterior_p3(data, edge_prior: float = 0.2, params: GWishartParams | None = None) -> np.ndarray:
    """Exact 3 x 3 matrix of posterior edge probabilities.

    ``data`` is either an all-continuous Dataset (scores are its rank
    transform) or an ``n x 3`` array of latent scores, which may have zero rows.
    """
    p = data.p if isinstance(data, Dataset) else np.asarray(data).reshape(-1, np.shape(data)[-1]).shape[1]
    if p != 3:
        raise UnsupportedDimension(
            f"exact enumeration needs p = 3, got p = {p}; use the MCMC for larger problems", p=p
        )
    if isinstance(data, Dataset) and any(s.is_latent for s in data.schema):
        raise UnsupportedDimension("exact enumeration requires all columns to be continuous")
    z = oracle_scores(data)
    params = params or GWishartParams.default(3)
    graphs, probs, _ = exact_graph_posterior(z.T @ z, z.shape[0], edge_prior, params)
    out = np.zeros((3, 3))
    for g, w in zip(graphs, probs):
        out += g.adj * w
    return out


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the rank-sum statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative pairs")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_score(pred, labels) -> float:
    pred = np.asarray(pred, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = np.sum(pred & labels)
    denom = 2 * tp + np.sum(pred & ~labels) + np.sum(~pred & labels)
    return float(2 * tp / denom) if denom else 1.0


def calibration_table(probs, labels, n_bins: int = 5):
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.digitize(probs, edges[1:-1]), 0, n_bins - 1)
    rows = []
    for b in range(n_bins):
        sel = idx == b
        rows.append(
            {
                "bucket": [float(edges[b]), float(edges[b + 1])],
                "count": int(sel.sum()),
                "mean_predicted": float(probs[sel].mean()) if sel.any() else None,
                "empirical_frequency": float(labels[sel].mean()) if sel.any() else None,
            }
        )
    return rows


@dataclass
class RecoveryReport:
    auc: float
    f1_at_threshold: float
    calibration_bins: list
    runtime_seconds: float
    threshold: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


def score_probabilities(prob_matrix, true_graph: Graph, threshold: float = 0.5, runtime=0.0) -> RecoveryReport:
    iu = np.triu_indices(true_graph.p, 1)
    probs = np.asarray(prob_matrix)[iu]
    truth = true_graph.adj[iu]
    return RecoveryReport(
        auc=roc_auc(probs, truth),
        f1_at_threshold=f1_score(probs >= threshold, truth),
        calibration_bins=calibration_table(probs, truth),
        runtime_seconds=runtime,
        threshold=threshold,
    )


def evaluate(ds: Dataset, true_graph: Graph, cfg: McmcConfig, params=None, threshold: float = 0.5) -> RecoveryReport:
    """Fit ``ds`` and score its edge probabilities against ``true_graph``."""
    start = time.perf_counter()
    result = sample_chain(ds, cfg, params)
    elapsed = time.perf_counter() - start
    return score_probabilities(result.accumulator.edge_probabilities(), true_graph, threshold, elapsed)


def write_fixture(directory, name: str, spec: SyntheticSpec, ds: Dataset, g: Graph, K: np.ndarray) -> dict:
    """Write ``<name>.csv``, ``<name>.schema.json`` and ``<name>.truth.json``.

    The truth file records the generating spec, the true edge list (1-based
    node indices, like every exported file) and the true precision matrix.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "data": directory / f"{name}.csv",
        "schema": directory / f"{name}.schema.json",
        "truth": directory / f"{name}.truth.json",
    }
    ds.to_csv(paths["data"])
    paths["schema"].write_text(json.dumps(ds.schema_json(), indent=2) + "\n")
    truth = {"spec": spec.to_dict(), "p": g.p, "edges": [[i + 1, j + 1] for i, j in g.edges], "precision": K.tolist()}
    paths["truth"].write_text(json.dumps(truth, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}


def load_truth(path) -> tuple[Graph, np.ndarray, dict]:
    doc = json.loads(Path(path).read_text())
    g = Graph(int(doc["p"]), [(int(i) - 1, int(j) - 1) for i, j in doc["edges"]])
    return g, np.array(doc["precision"]), doc
