"""Gaussian copula layer: rank-based scores and rank-likelihood resampling.

Continuous columns are mapped once to normal scores ``ndtri(rank / (n + 1))``
(mid-ranks for ties).  Ordinal and binary columns keep a latent Gaussian
column that is redrawn every MCMC iteration from its truncated normal full
conditional, with truncation bounds implied by the observed ordering.

Scan contract for :func:`resample_latent`: latent columns are visited in index
order; within a column, levels are visited in increasing order.  Rows sharing a
level have bounds that depend only on rows at *other* levels, so they are
conditionally independent and are drawn together.  This is the cell-by-cell
Gibbs scan with a level-major row order, and it is single-threaded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp
from scipy.stats import rankdata

from . import _kernels
from .errors import DegenerateColumn, TooFewRows
from .schema_io import MIN_ROWS, Dataset


def rank_scores(column) -> np.ndarray:
    """Normal scores of mid-ranks scaled by ``n + 1``.  No distinctness check."""
    column = np.asarray(column, dtype=float)
    n = column.size
    return ndtri(rankdata(column, method="average") / (n + 1.0))


def continuous_transform(column) -> np.ndarray:
    """Semiparametric normal-score transform of a continuous column.

    Only the ranks of ``column`` matter, so any strictly increasing
    distortion of the input gives an identical output.
    """
    column = np.asarray(column, dtype=float)
    if np.unique(column).size < 3:
        raise DegenerateColumn("continuous transform needs at least 3 distinct values")
    return rank_scores(column)


def truncnorm_standard(a, b, u):
    """Inverse-CDF draw from N(0, 1) truncated to ``(a, b)`` given uniforms ``u``.

    Works in log-CDF space so that intervals far in either tail keep full
    precision.  Returns ``(x, underflow)`` where ``underflow`` flags cells whose
    interval carries no representable probability mass; those are clamped to
    the interval midpoint (or to the finite bound of a half-infinite interval).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)
    a, b, u = np.broadcast_arrays(a, b, u)
    # reflect intervals lying in the upper tail so the log-CDF is accurate
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    u = np.where(flip, 1.0 - u, u)
    log_lo = log_ndtr(lo)
    log_hi = log_ndtr(hi)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ratio = np.exp(log_lo - log_hi)
        logp = log_hi + np.log(u + (1.0 - u) * ratio)
        x = ndtri_exp(np.minimum(logp, 0.0))
    x = np.where(flip, -x, x)
    underflow = ~((log_hi - log_lo) > 1e-300) | ~np.isfinite(x)
    x = np.clip(x, a, b)
    if underflow.any():
        mid = np.where(
            np.isfinite(a) & np.isfinite(b),
            0.5 * (a + b),
            np.where(np.isfinite(a), a, b),
        )
        x = np.where(underflow, mid, x)
    return x, underflow


def rtruncnorm(mean, sd, lower, upper, rng: np.random.Generator, size=None):
    """Draw from N(mean, sd^2) truncated to ``(lower, upper)``.

    Returns ``(draws, n_underflow)``.
    """
    mean = np.asarray(mean, dtype=float)
    shape = np.broadcast_shapes(np.shape(mean), np.shape(sd), np.shape(lower), np.shape(upper))
    if size is not None:
        shape = np.broadcast_shapes(shape, (size,) if np.isscalar(size) else tuple(size))
    u = rng.random(shape)
    z, underflow = truncnorm_standard((lower - mean) / sd, (upper - mean) / sd, u)
    return mean + sd * z, int(np.count_nonzero(underflow))


@dataclass
class LatentState:
    """Latent Gaussian matrix plus the level structure of rank-likelihood columns.

    ``level_rows[j]`` lists, for latent column ``j``, the row indices at each
    observed level in increasing level order; ``levels[j]`` holds the level
    values themselves.  Both are empty for continuous columns.
    """

    z: np.ndarray
    is_latent_column: np.ndarray
    levels: list = field(default_factory=list)
    level_rows: list = field(default_factory=list)
    n_underflow: int = 0
    _layout: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def latent_columns(self) -> np.ndarray:
        return np.flatnonzero(self.is_latent_column)

    @classmethod
    def from_scores(cls, z) -> "LatentState":
        """State with every column fixed (no rank-likelihood columns)."""
        z = np.array(z, dtype=float, ndmin=2)
        p = z.shape[1]
        return cls(
            z=z,
            is_latent_column=np.zeros(p, dtype=bool),
            levels=[np.empty(0)] * p,
            level_rows=[[] for _ in range(p)],
        )

    def copy(self) -> "LatentState":
        return LatentState(
            z=self.z.copy(),
            is_latent_column=self.is_latent_column.copy(),
            levels=list(self.levels),
            level_rows=list(self.level_rows),
            n_underflow=self.n_underflow,
        )

    def scan_layout(self) -> tuple:
        """Flat ``(columns, rows, col_start, level_start)`` arrays for the compiled scan."""
        if self._layout is None:
            cols = self.latent_columns.astype(np.int64)
            groups = [g for j in cols for g in self.level_rows[j]]
            col_start = np.cumsum([0] + [len(self.level_rows[j]) for j in cols]).astype(np.int64)
            level_start = np.cumsum([0] + [len(g) for g in groups]).astype(np.int64)
            rows = np.concatenate(groups).astype(np.int64) if groups else np.empty(0, dtype=np.int64)
            self._layout = (cols, rows, col_start, level_start)
        return self._layout

    def level_bounds(self, j: int) -> dict:
        """Current truncation interval ``{level: (lower, upper)}`` for latent column ``j``."""
        rows = self.level_rows[j]
        col = self.z[:, j]
        out = {}
        for k, level in enumerate(self.levels[j]):
            lower = col[rows[k - 1]].max() if k > 0 else -np.inf
            upper = col[rows[k + 1]].min() if k + 1 < len(rows) else np.inf
            out[float(level)] = (float(lower), float(upper))
        return out


def is_rank_consistent(z: np.ndarray, observed: np.ndarray, columns) -> bool:
    """Check ``Y[s,j] < Y[t,j]  =>  Z[s,j] < Z[t,j]`` for the given columns."""
    for j in columns:
        y = observed[:, j]
        for level in np.unique(y)[:-1]:
            if z[y <= level, j].max() >= z[y > level, j].min():
                return False
    return True


def initialize_latent(ds: Dataset) -> LatentState:
    """Initial latent state for a dataset.

    Continuous-modeled columns get :func:`continuous_transform`; rank-likelihood
    columns start from the same rank map applied to their level codes, which is
    a rank-consistent starting point.
    """
    if ds.n < MIN_ROWS:
        raise TooFewRows(f"need at least {MIN_ROWS} rows to fit, got {ds.n}", count=ds.n)
    z = np.empty((ds.n, ds.p))
    is_latent = np.zeros(ds.p, dtype=bool)
    levels, level_rows = [], []
    for j, spec in enumerate(ds.schema):
        col = ds.values[:, j]
        if spec.is_latent:
            is_latent[j] = True
            if np.unique(col).size < 2:
                raise DegenerateColumn(f"column {j + 1} ({spec.abbreviation}) is constant", column=j + 1)
            z[:, j] = rank_scores(col)
            lv = np.unique(col)
            levels.append(lv)
            level_rows.append([np.flatnonzero(col == v) for v in lv])
        else:
            try:
                z[:, j] = continuous_transform(col)
            except DegenerateColumn:
                raise DegenerateColumn(
                    f"column {j + 1} ({spec.abbreviation}) has fewer than 3 distinct values",
                    column=j + 1,
                ) from None
            levels.append(np.empty(0))
            level_rows.append([])
    return LatentState(z=z, is_latent_column=is_latent, levels=levels, level_rows=level_rows)


def resample_latent(state: LatentState, K: np.ndarray, rng: np.random.Generator) -> LatentState:
    """One Gibbs scan over all rank-likelihood cells, updating ``state`` in place.

    Each cell is drawn from its normal full conditional given the other
    columns, ``N(-sum_{t != j} K[j,t] z[s,t] / K[j,j], 1 / K[j,j])``, truncated
    to lie above every latent value at a lower observed level and below every
    value at a higher level.  Uniforms come from ``rng`` in scan order.
    """
    cols, rows, col_start, level_start = state.scan_layout()
    if cols.size == 0:
        return state
    u = rng.random(rows.size)
    K = np.ascontiguousarray(K, dtype=float)
    state.n_underflow += int(_kernels.resample_scan(state.z, K, cols, rows, col_start, level_start, u))
    return state


def latent_group_moves(
    state: LatentState, K: np.ndarray, adj: np.ndarray, b: float, D: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Shift and scale moves on every rank-likelihood column.

    The ordering constraints are unchanged by ``z_j -> gamma z_j + beta`` with
    ``gamma > 0``, while the single-cell scan moves a column's location and
    spread only slowly.  Both group elements are drawn from their conditionals
    under Haar reference measure, which keeps the joint posterior of ``(z, K)``
    invariant:

    * shift: ``z_j + beta`` with ``beta`` an exact normal draw given ``K``;
    * scale: ``z_j * gamma`` together with ``K[j, :] / gamma`` and
      ``K[:, j] / gamma``, which leaves every ``z_i' K z_i`` unchanged.  Then
      ``gamma^{-2} ~ Gamma((b + deg_j) / 2, rate = D_jj K_jj / 2)``; when
      ``D`` couples ``j`` to other nodes, the draw is a Metropolis proposal
      and the coupling term enters the acceptance ratio.

    ``state.z`` is updated in place; the returned precision is a new array.
    """
    cols = state.latent_columns
    K = np.array(K, dtype=float)
    if cols.size == 0:
        return K
    z = state.z
    n = state.n
    shifts = rng.standard_normal(cols.size)
    gammas = rng.standard_gamma((b + adj[cols].sum(axis=1)) / 2.0)
    log_u = np.log(rng.random(cols.size))
    for c_idx, j in enumerate(cols):
        kjj = K[j, j]
        col_sum = (z.sum(axis=0) @ K[:, j]) if n else 0.0
        if n:
            z[:, j] += -col_sum / (n * kjj) + shifts[c_idx] / np.sqrt(n * kjj)
        tau = gammas[c_idx] / (0.5 * D[j, j] * kjj)
        inv_gamma = np.sqrt(tau)
        cross = D[:, j] @ K[:, j] - D[j, j] * kjj
        if cross != 0.0 and not log_u[c_idx] < -cross * (inv_gamma - 1.0):
            continue
        z[:, j] /= inv_gamma
        K[j, :] *= inv_gamma
        K[:, j] *= inv_gamma
    return K


def resample_latent_reference(state: LatentState, K: np.ndarray, rng: np.random.Generator) -> LatentState:
    """Vectorized pure-numpy version of :func:`resample_latent` with the same
    scan order and random stream; kept as a cross-check for the compiled scan.
    """
    z = state.z
    for j in state.latent_columns:
        kjj = K[j, j]
        sd = 1.0 / np.sqrt(kjj)
        mean = -(z @ K[:, j] - z[:, j] * kjj) / kjj
        groups = state.level_rows[j]
        for k, rows in enumerate(groups):
            lower = z[groups[k - 1], j].max() if k > 0 else -np.inf
            upper = z[groups[k + 1], j].min() if k + 1 < len(groups) else np.inf
            draws, n_bad = rtruncnorm(mean[rows], sd, lower, upper, rng)
            z[rows, j] = draws
            state.n_underflow += n_bad
    return state
