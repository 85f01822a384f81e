"""G-Wishart distribution: graphs, sampling, densities and exact constants.

The G-Wishart law ``W_G(b, D)`` has density proportional to

    |K|^{(b-2)/2} exp(-tr(D K) / 2)

on symmetric positive definite matrices whose off-diagonal entries vanish
outside the edge set of ``G``.  Precision matrices are plain ``numpy`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
from scipy.special import multigammaln

from . import _kernels
from .errors import CompletionNotConverged, NotDecomposable, NotSPD, UnsupportedScale

COMPLETION_TOL = 1e-8
MAX_SWEEPS = 1000
MAX_EXACT_TRIES = 1_000_000


class Graph:
    """Undirected simple graph on ``p`` nodes backed by a boolean adjacency matrix."""

    __slots__ = ("adj",)

    def __init__(self, p: int, edges=()):
        adj = np.zeros((p, p), dtype=bool)
        for i, j in edges:
            if i == j:
                raise ValueError("self-loops are not allowed")
            if not (0 <= i < p and 0 <= j < p):
                raise ValueError(f"edge ({i}, {j}) out of range for p={p}")
            adj[i, j] = adj[j, i] = True
        adj.setflags(write=False)
        self.adj = adj

    @classmethod
    def from_adjacency(cls, adj) -> "Graph":
        adj = np.array(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(np.diag(adj)) or np.any(adj != adj.T):
            raise ValueError("adjacency must be symmetric with an empty diagonal")
        g = cls.__new__(cls)
        adj.setflags(write=False)
        g.adj = adj
        return g

    @classmethod
    def empty(cls, p: int) -> "Graph":
        return cls(p)

    @classmethod
    def complete(cls, p: int) -> "Graph":
        return cls.from_adjacency(~np.eye(p, dtype=bool))

    @property
    def p(self) -> int:
        return self.adj.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(self.adj)) // 2

    @property
    def n_pairs(self) -> int:
        return self.p * (self.p - 1) // 2

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adj[i, j])

    def neighbors(self, v: int) -> list[int]:
        return np.flatnonzero(self.adj[v]).tolist()

    def toggled(self, i: int, j: int) -> "Graph":
        adj = self.adj.copy()
        adj[i, j] = adj[j, i] = not adj[i, j]
        g = Graph.__new__(Graph)
        adj.setflags(write=False)
        g.adj = adj
        return g

    def permuted(self, perm) -> "Graph":
        """Relabel so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return Graph.from_adjacency(self.adj[np.ix_(perm, perm)])

    def is_complete(self) -> bool:
        return self.n_edges == self.n_pairs

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and np.array_equal(self.adj, other.adj)

    def __hash__(self) -> int:
        return hash((self.p, self.adj.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(p={self.p}, edges={self.edges})"


def all_pairs(p: int) -> list[tuple[int, int]]:
    return list(combinations(range(p), 2))


@dataclass(frozen=True, eq=False)
class GWishartParams:
    """Degrees of freedom ``b`` (> 2) and SPD scale matrix ``D``."""

    b: float = 3.0
    D: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.b > 2:
            raise ValueError(f"degrees of freedom must exceed 2, got {self.b}")
        if self.D is None:
            raise ValueError("scale matrix D is required; use GWishartParams.default(p)")
        D = np.array(self.D, dtype=float, ndmin=2)
        if D.shape[0] != D.shape[1] or not np.allclose(D, D.T):
            raise ValueError("D must be a symmetric square matrix")
        try:
            np.linalg.cholesky(D)
        except np.linalg.LinAlgError:
            raise NotSPD("D must be positive definite") from None
        D.setflags(write=False)
        object.__setattr__(self, "D", D)

    @classmethod
    def default(cls, p: int, b: float = 3.0) -> "GWishartParams":
        return cls(b=b, D=np.eye(p))

    @property
    def p(self) -> int:
        return self.D.shape[0]

    @cached_property
    def chol_psi(self) -> np.ndarray:
        """Lower Cholesky factor of ``D^{-1}``, the full-Wishart scale."""
        return np.linalg.cholesky(np.linalg.inv(self.D))

    def is_identity_scale(self) -> bool:
        return np.array_equal(self.D, np.eye(self.p))

    def posterior(self, S: np.ndarray, n: int) -> "GWishartParams":
        """Conjugate update for ``n`` zero-mean observations with scatter ``S``."""
        return GWishartParams(b=self.b + n, D=self.D + S)


def _check_graph_params(g: Graph, params: GWishartParams):
    if g.p != params.p:
        raise ValueError(f"graph has {g.p} nodes but D is {params.p}x{params.p}")


def sample_gwishart(
    g: Graph,
    params: GWishartParams,
    rng: np.random.Generator,
    tol: float = COMPLETION_TOL,
    max_sweeps: int = MAX_SWEEPS,
    return_info: bool = False,
    method: str = "direct",
):
    """Draw ``K ~ W_G(b, D)``.

    ``method="direct"`` completes a full-Wishart covariance draw, vertex by
    vertex, until its inverse vanishes off the graph.  Convergence is
    measured on the scaled off-pattern entries ``|K_ij| / sqrt(K_ii K_jj)``;
    those entries are then set to exactly zero.  If the sweeps stall before
    ``max_sweeps`` reach the tolerance, a damped Newton solve of the same
    completion problem finishes the job (``info["newton"]``).  The draw is
    exact for the complete graph and has the right clique marginals, but on
    incomplete graphs the joint law is only approximate (the completed
    entries inherit dependence from the full Wishart).  The empty graph is
    drawn exactly as independent gamma diagonals.

    ``method="exact"`` uses rejection on the upper triangular factor
    (:func:`gcgm._kernels.gwishart_exact`) and is exact for every graph; its
    cost grows with the fill-in of the graph.  ``info["tries"]`` counts the
    proposals.
    """
    _check_graph_params(g, params)
    p = g.p
    if method == "exact":
        k, tries = _kernels.gwishart_exact(rng, g.adj, float(params.b), params.D, MAX_EXACT_TRIES)
        if tries < 0:
            raise CompletionNotConverged(
                f"rejection sampler accepted nothing in {MAX_EXACT_TRIES} proposals", tries=MAX_EXACT_TRIES
            )
        return (k, {"sweeps": 0, "residual": 0.0, "newton": False, "tries": int(tries)}) if return_info else k
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    if g.n_edges == 0:
        k = np.diag(2.0 * rng.standard_gamma(0.5 * params.b, p) / np.diag(params.D))
        return (k, {"sweeps": 0, "residual": 0.0, "newton": False}) if return_info else k
    nu = params.b + p - 1
    chi2 = rng.chisquare(nu - np.arange(p))
    normals = rng.standard_normal(p * (p - 1) // 2)
    k, sweeps, residual, status = _kernels.gwishart_draw(
        params.chol_psi, chi2, normals, g.adj, tol, max_sweeps
    )
    if status == 1:
        raise CompletionNotConverged(
            f"completion did not converge in {max_sweeps} sweeps or the Newton fallback "
            f"(residual {residual:.3g})",
            sweeps=int(sweeps),
        )
    if status == 2:
        raise NotSPD("sampled matrix is not positive definite after zero enforcement")
    if return_info:
        return k, {"sweeps": int(sweeps), "residual": float(residual), "newton": status == 3}
    return k


def completion_history(g: Graph, params: GWishartParams, rng: np.random.Generator,
                       tol: float = COMPLETION_TOL, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Per-sweep scaled off-pattern residuals of one completion run."""
    p = g.p
    chi2 = rng.chisquare(params.b + p - 1 - np.arange(p))
    normals = rng.standard_normal(p * (p - 1) // 2)
    sigma, _ = _kernels.bartlett_covariance(params.chol_psi, chi2, normals)
    _, _, history, _ = _kernels.complete_covariance(sigma, g.adj, tol, max_sweeps)
    return history


def enforce_pattern(k: np.ndarray, g: Graph) -> np.ndarray:
    """Symmetrize, zero the off-pattern entries and verify positive definiteness."""
    k = 0.5 * (k + k.T)
    mask = ~g.adj
    np.fill_diagonal(mask, False)
    k[mask] = 0.0
    try:
        np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        raise NotSPD("matrix is not positive definite after zero enforcement") from None
    return k


def respects_pattern(k: np.ndarray, g: Graph, atol: float = 0.0) -> bool:
    mask = ~g.adj
    np.fill_diagonal(mask, False)
    return bool(np.all(np.abs(k[mask]) <= atol))


def log_density_unnorm(K: np.ndarray, g: Graph, params: GWishartParams) -> float:
    """``((b - 2) / 2) log det K - tr(D K) / 2``."""
    assert respects_pattern(K, g, atol=1e-8), "K violates the zero pattern of g"
    try:
        chol = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise NotSPD("K is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return 0.5 * (params.b - 2.0) * logdet - 0.5 * float(np.sum(params.D * K))


# -- decomposable graphs ---------------------------------------------------


def mcs_order(g: Graph) -> list[int]:
    """Maximum cardinality search ordering (ties broken by smallest index)."""
    p = g.p
    weight = np.zeros(p, dtype=int)
    numbered = np.zeros(p, dtype=bool)
    order = []
    for _ in range(p):
        cand = np.where(numbered, -1, weight)
        v = int(np.argmax(cand))
        order.append(v)
        numbered[v] = True
        weight[g.adj[v] & ~numbered] += 1
    return order


def perfect_sequence(g: Graph) -> list[tuple[frozenset, frozenset]]:
    """Ladder sets ``(C_i, pa_i)`` along an MCS ordering.

    ``pa_i`` holds the neighbours of the ``i``-th vertex numbered before it and
    ``C_i = pa_i + {v_i}``.  Raises NotDecomposable when some ``pa_i`` is not
    complete, i.e. when the graph is not chordal.
    """
    order = mcs_order(g)
    seq = []
    for k, v in enumerate(order):
        pa = [u for u in order[:k] if g.adj[v, u]]
        for a, b in combinations(pa, 2):
            if not g.adj[a, b]:
                raise NotDecomposable(f"graph is not decomposable (chordless cycle through {v})")
        seq.append((frozenset(pa) | {v}, frozenset(pa)))
    return seq


def is_decomposable(g: Graph) -> bool:
    try:
        perfect_sequence(g)
    except NotDecomposable:
        return False
    return True


def cliques_and_separators(g: Graph) -> tuple[list[frozenset], list[frozenset]]:
    """Maximal cliques and separators (with multiplicity, possibly empty)."""
    seq = perfect_sequence(g)
    cliques, seps = [], []
    for k, (c, pa) in enumerate(seq):
        starts_new = k == 0 or len(pa) <= len(seq[k - 1][1])
        if starts_new:
            if k > 0:
                cliques.append(seq[k - 1][0])
                seps.append(pa)
        if k == len(seq) - 1:
            cliques.append(c)
    return cliques, seps


def log_wishart_const(b: float, D: np.ndarray) -> float:
    """Log normalizing constant of ``|K|^{(b-2)/2} exp(-tr(DK)/2)`` over all
    ``q x q`` SPD matrices (complete graph)."""
    q = D.shape[0]
    if q == 0:
        return 0.0
    h = 0.5 * (b + q - 1)
    _, logdet = np.linalg.slogdet(D)
    return q * h * np.log(2.0) + multigammaln(h, q) - h * logdet


def _log_norm_const(g: Graph, b: float, D: np.ndarray) -> float:
    total = 0.0
    for c, pa in perfect_sequence(g):
        ci = sorted(c)
        pi = sorted(pa)
        total += log_wishart_const(b, D[np.ix_(ci, ci)])
        total -= log_wishart_const(b, D[np.ix_(pi, pi)])
    return total


def log_norm_const_decomposable(g: Graph, params: GWishartParams) -> float:
    """Exact ``log I_G(b, I)`` for a decomposable graph (clique/separator product)."""
    _check_graph_params(g, params)
    if not params.is_identity_scale():
        raise UnsupportedScale("only the identity scale matrix is supported")
    return _log_norm_const(g, params.b, params.D)


def log_marginal_likelihood_decomposable(
    g: Graph, params: GWishartParams, S: np.ndarray, n: int
) -> float:
    """``log p(Z | G)`` with ``K`` integrated out under ``W_G(b, I)``.

    Equals ``log I_G(b + n, I + S) - log I_G(b, I) - (n p / 2) log(2 pi)``.
    """
    prior = log_norm_const_decomposable(g, params)
    S = np.asarray(S, dtype=float)
    post = _log_norm_const(g, params.b + n, params.D + S)
    return post - prior - 0.5 * n * g.p * np.log(2.0 * np.pi)
