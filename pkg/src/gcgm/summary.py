"""Posterior summaries: edge probabilities, partial-correlation posteriors with
a point mass at zero, thresholded networks and the Pearson baseline."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .errors import DegenerateColumn, EmptyAccumulator, NotSPD
from .gwishart import Graph

N_BINS = 200
BIN_WIDTH = 2.0 / N_BINS


def partial_correlations(K: np.ndarray) -> np.ndarray:
    """``rho_ij = -K_ij / sqrt(K_ii K_jj)`` with a unit diagonal."""
    K = np.asarray(K, dtype=float)
    try:
        np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise NotSPD("K is not positive definite") from None
    d = 1.0 / np.sqrt(np.diag(K))
    rho = -K * np.outer(d, d)
    rho = 0.5 * (rho + rho.T)
    np.clip(rho, -1.0, 1.0, out=rho)
    np.fill_diagonal(rho, 1.0)
    return rho


def bin_index(values: np.ndarray) -> np.ndarray:
    idx = np.floor((np.asarray(values) + 1.0) / BIN_WIDTH).astype(np.int64)
    return np.clip(idx, 0, N_BINS - 1)


def bin_edges() -> np.ndarray:
    return np.linspace(-1.0, 1.0, N_BINS + 1)


@dataclass
class PosteriorAccumulator:
    """Streaming sums over retained MCMC samples.

    Partial-correlation sums, extremes and histograms only see samples in
    which the edge is present; the remaining mass is the spike at zero.
    Histograms are stored per pair in upper-triangle order.
    """

    p: int
    sample_count: int = 0
    edge_counts: np.ndarray = None
    parcor_sum: np.ndarray = None
    parcor_sumsq: np.ndarray = None
    parcor_min: np.ndarray = None
    parcor_max: np.ndarray = None
    parcor_hist: np.ndarray = None
    trace: list = field(default_factory=list)
    trace_every: int = 0

    def __post_init__(self):
        p = self.p
        npairs = p * (p - 1) // 2
        if self.edge_counts is None:
            self.edge_counts = np.zeros((p, p), dtype=np.int64)
        if self.parcor_sum is None:
            self.parcor_sum = np.zeros((p, p))
        if self.parcor_sumsq is None:
            self.parcor_sumsq = np.zeros((p, p))
        if self.parcor_min is None:
            self.parcor_min = np.full((p, p), np.inf)
        if self.parcor_max is None:
            self.parcor_max = np.full((p, p), -np.inf)
        if self.parcor_hist is None:
            self.parcor_hist = np.zeros((npairs, N_BINS), dtype=np.int64)
        self._iu = np.triu_indices(p, 1)

    @property
    def n_pairs(self) -> int:
        return self.p * (self.p - 1) // 2

    def push(self, adj: np.ndarray, K: np.ndarray) -> None:
        """Record one retained ``(G, K)`` sample."""
        _kernels.accumulate(
            adj, K, self.edge_counts, self.parcor_sum, self.parcor_sumsq,
            self.parcor_min, self.parcor_max, self.parcor_hist, N_BINS,
        )
        self.sample_count += 1
        if self.trace_every and self.sample_count % self.trace_every == 0:
            self.trace.append((self.sample_count, self.edge_probabilities()[self._iu]))

    def merged(self, other: "PosteriorAccumulator") -> "PosteriorAccumulator":
        if other.p != self.p:
            raise ValueError("cannot merge accumulators of different dimension")
        return PosteriorAccumulator(
            p=self.p,
            sample_count=self.sample_count + other.sample_count,
            edge_counts=self.edge_counts + other.edge_counts,
            parcor_sum=self.parcor_sum + other.parcor_sum,
            parcor_sumsq=self.parcor_sumsq + other.parcor_sumsq,
            parcor_min=np.minimum(self.parcor_min, other.parcor_min),
            parcor_max=np.maximum(self.parcor_max, other.parcor_max),
            parcor_hist=self.parcor_hist + other.parcor_hist,
            trace=list(self.trace) + list(other.trace),
            trace_every=self.trace_every,
        )

    def edge_probabilities(self) -> np.ndarray:
        if self.sample_count == 0:
            raise EmptyAccumulator("no retained samples")
        return self.edge_counts / self.sample_count

    def spike(self, i: int, j: int) -> int:
        """Number of retained samples in which ``(i, j)`` is absent."""
        return int(self.sample_count - self.edge_counts[i, j])

    def pair_index(self, i: int, j: int) -> int:
        i, j = min(i, j), max(i, j)
        return i * self.p - i * (i + 1) // 2 + (j - i - 1)

    def density(self, i: int, j: int) -> tuple[float, np.ndarray]:
        """``(spike_mass, bin_masses)`` of the posterior of ``rho_ij``."""
        if self.sample_count == 0:
            raise EmptyAccumulator("no retained samples")
        n = self.sample_count
        return self.spike(i, j) / n, self.parcor_hist[self.pair_index(i, j)] / n

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "sample_count": self.sample_count,
            "edge_counts": self.edge_counts,
            "parcor_sum": self.parcor_sum,
            "parcor_sumsq": self.parcor_sumsq,
            "parcor_min": self.parcor_min,
            "parcor_max": self.parcor_max,
            "parcor_hist": self.parcor_hist,
            "trace_every": self.trace_every,
            "trace_counts": np.array([c for c, _ in self.trace], dtype=np.int64),
            "trace_values": (
                np.array([v for _, v in self.trace])
                if self.trace
                else np.zeros((0, self.n_pairs))
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorAccumulator":
        trace = [(int(c), np.asarray(v)) for c, v in zip(d["trace_counts"], d["trace_values"])]
        return cls(
            p=int(d["p"]),
            sample_count=int(d["sample_count"]),
            edge_counts=np.asarray(d["edge_counts"], dtype=np.int64),
            parcor_sum=np.asarray(d["parcor_sum"], dtype=float),
            parcor_sumsq=np.asarray(d["parcor_sumsq"], dtype=float),
            parcor_min=np.asarray(d["parcor_min"], dtype=float),
            parcor_max=np.asarray(d["parcor_max"], dtype=float),
            parcor_hist=np.asarray(d["parcor_hist"], dtype=np.int64),
            trace=trace,
            trace_every=int(d["trace_every"]),
        )


@dataclass(frozen=True)
class EdgeSummary:
    i: int
    j: int
    probability: float
    mean_parcor: float
    mean_parcor_given_edge: float
    sd_parcor: float
    ci90: tuple[float, float]
    spike_mass: float


def _spiked_quantile(spike: int, hist: np.ndarray, lo: float, hi: float, q: float) -> float:
    """Inverse-CDF quantile of the spike-plus-histogram distribution.

    The value is the midpoint of the bin holding the quantile, so it is within
    half a bin (0.005) of the exact sample quantile, then clipped to the
    observed range of the samples (which includes 0 when the spike is non-empty).
    """
    half = N_BINS // 2
    masses = np.concatenate([hist[:half], [spike], hist[half:]])
    total = masses.sum()
    cum = np.cumsum(masses)
    k = int(np.searchsorted(cum, q * total - 1e-9 * total, side="left"))
    k = min(k, masses.size - 1)
    if k == half:
        value = 0.0
    else:
        b = k if k < half else k - 1
        value = -1.0 + (b + 0.5) * BIN_WIDTH
    if spike > 0:
        lo, hi = min(lo, 0.0), max(hi, 0.0)
    return float(np.clip(value, lo, hi))


def summarize(acc: PosteriorAccumulator) -> list[EdgeSummary]:
    """One EdgeSummary per pair ``i < j`` in upper-triangle order."""
    if acc.sample_count == 0:
        raise EmptyAccumulator("no retained samples")
    n = acc.sample_count
    out = []
    for i in range(acc.p):
        for j in range(i + 1, acc.p):
            count = int(acc.edge_counts[i, j])
            prob = count / n
            mean = acc.parcor_sum[i, j] / n
            second = acc.parcor_sumsq[i, j] / n
            var = max(second - mean * mean, 0.0)
            spike = n - count
            hist = acc.parcor_hist[acc.pair_index(i, j)]
            lo, hi = acc.parcor_min[i, j], acc.parcor_max[i, j]
            ci = (
                _spiked_quantile(spike, hist, lo, hi, 0.05),
                _spiked_quantile(spike, hist, lo, hi, 0.95),
            )
            out.append(
                EdgeSummary(
                    i=i,
                    j=j,
                    probability=prob,
                    mean_parcor=float(mean),
                    mean_parcor_given_edge=float(acc.parcor_sum[i, j] / count) if count else 0.0,
                    sd_parcor=float(np.sqrt(var)),
                    ci90=ci,
                    spike_mass=spike / n,
                )
            )
    return out


@dataclass(frozen=True)
class NetworkEdge:
    i: int
    j: int
    probability: float
    mean_parcor: float

    @property
    def sign(self) -> str:
        return "negative" if self.mean_parcor < 0 else "positive"

    @property
    def color(self) -> str:
        return "red" if self.mean_parcor < 0 else "blue"


@dataclass(frozen=True)
class Network:
    p: int
    labels: tuple[str, ...]
    edges: tuple[NetworkEdge, ...]
    threshold: float

    @property
    def graph(self) -> Graph:
        return Graph(self.p, [(e.i, e.j) for e in self.edges])


def threshold_network(summaries, threshold: float = 0.5, labels=None, p: int | None = None) -> Network:
    """Keep pairs whose inclusion probability is at least ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    summaries = list(summaries)
    if p is None:
        p = max((max(s.i, s.j) for s in summaries), default=-1) + 1
    if labels is None:
        labels = [str(k) for k in range(p)]
    kept = tuple(
        NetworkEdge(s.i, s.j, s.probability, s.mean_parcor)
        for s in summaries
        if s.probability >= threshold
    )
    return Network(p=p, labels=tuple(labels), edges=kept, threshold=threshold)


def network_from_accumulator(acc: PosteriorAccumulator, threshold=0.5, labels=None) -> Network:
    return threshold_network(summarize(acc), threshold, labels=labels, p=acc.p)


def parcor_matrix(summaries, p: int, threshold: float = 0.5) -> np.ndarray:
    """Posterior mean partial correlations, zeroed where the edge probability
    is below ``threshold``; unit diagonal."""
    out = np.eye(p)
    for s in summaries:
        if s.probability >= threshold:
            out[s.i, s.j] = out[s.j, s.i] = s.mean_parcor
    return out


def probability_matrix(summaries, p: int) -> np.ndarray:
    out = np.zeros((p, p))
    for s in summaries:
        out[s.i, s.j] = out[s.j, s.i] = s.probability
    return out


def pearson_baseline(ds, alpha: float = 0.05) -> np.ndarray:
    """Pairwise Pearson correlations of the observed columns, with entries
    whose two-sided t-test p-value exceeds ``alpha`` set to zero."""
    values = np.asarray(ds if isinstance(ds, np.ndarray) else ds.values, dtype=float)
    n, p = values.shape
    if n < 3:
        raise ValueError("need at least 3 rows")
    sd = values.std(axis=0)
    if np.any(sd == 0):
        col = int(np.flatnonzero(sd == 0)[0]) + 1
        raise DegenerateColumn(f"column {col} has zero variance", column=col)
    r, pval = pearson_with_pvalues(values)
    out = np.where(pval > alpha, 0.0, r)
    np.fill_diagonal(out, 1.0)
    return out


def pearson_with_pvalues(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    r = np.clip(np.corrcoef(values, rowvar=False), -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
    pval = 2.0 * stats.t.sf(np.abs(t), n - 2)
    pval = np.where(np.abs(r) >= 1.0, 0.0, pval)
    return r, pval


def density_stats(matrix: np.ndarray, strong: float = 0.25) -> dict:
    """Mean absolute value, zeroed fraction and strong fraction over pairs."""
    iu = np.triu_indices(matrix.shape[0], 1)
    v = matrix[iu]
    if v.size == 0:
        return {"mean_abs": 0.0, "fraction_zero": 0.0, "fraction_strong": 0.0}
    return {
        "mean_abs": float(np.mean(np.abs(v))),
        "fraction_zero": float(np.mean(v == 0.0)),
        "fraction_strong": float(np.mean(np.abs(v) > strong)),
    }


def comparison_report(pearson: np.ndarray, parcor: np.ndarray) -> dict:
    return {"pearson": density_stats(pearson), "partial": density_stats(parcor)}


def node_neighborhood_report(summaries, node: int, k: int = 10):
    """Top-``k`` neighbours of ``node`` by inclusion probability.

    Ties are broken by larger ``|mean_parcor|`` and then by smaller index.
    """
    rows = []
    for s in summaries:
        if node in (s.i, s.j):
            other = s.j if s.i == node else s.i
            rows.append((other, s.probability, s.mean_parcor))
    rows.sort(key=lambda r: (-r[1], -abs(r[2]), r[0]))
    return rows[:k]
