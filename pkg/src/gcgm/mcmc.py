"""Posterior sampling over graphs, precision matrices and latent data.

One iteration performs

1. a sweep of single-edge toggles over every pair in turn (or, when
   ``proposals_per_iteration`` is set, that many uniformly chosen pairs), each accepted with an
   exchange-algorithm ratio (no normalizing constants needed),
2. a node-wise Gibbs scan of ``K`` that leaves ``W_G(b + n, D + Z'Z)``
   invariant (each node's Schur complement from its gamma law, then the free
   entries of its column from their Gaussian conditional),
3. a Gibbs scan of the rank-likelihood latent columns followed by a shift
   move on each of them and a joint scale move of the column and the
   matching row of ``K``, after which the scatter matrix is recomputed.

Edge toggle kernel
------------------
Order the nodes as ``(rest..., i, j)`` and write ``K = Phi' Phi`` with ``Phi``
upper triangular.  Given the precision block of the nodes other than ``j``
(equivalently the first ``p - 1`` factor columns) the last column of ``Phi``
is linear in its free entries: pinned entries are the values that zero the
matching precision entries.  Toggling ``(i, j)`` only moves ``Phi[i, j]``
between the free and pinned sets, so the G-Wishart-type density integrated
over that column is a Gaussian integral in closed form for either graph.  Its
log ratio ``T(K, D)`` (:func:`gcgm._kernels.collapsed_toggle_terms`) drives the
move.  The unknown ratio of prior normalizing constants is replaced, exchange
style, by the same quantity at an exact auxiliary draw ``K_aux ~ W_{G'}(b, D)``
(:func:`gcgm._kernels.gwishart_exact`):

    birth:  log r = log(q / (1 - q)) + T(K, D + S) - T(K_aux, D)
    death:  log r = log((1 - q) / q) - T(K, D + S) + T(K_aux, D)

On acceptance the column of ``j`` is redrawn from its Gaussian conditional
under the new graph.  The move is an exchange step for ``G`` on the space
with that column integrated out, followed by an exact conditional draw, so it
leaves the joint posterior of ``(G, K)`` invariant.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .copula import LatentState, initialize_latent, latent_group_moves, resample_latent
from .errors import CheckpointError, CompletionNotConverged, ConfigInvalid, NotSPD
from .gwishart import (
    MAX_EXACT_TRIES,
    Graph,
    GWishartParams,
    all_pairs,
    respects_pattern,
    sample_gwishart,
)
from .schema_io import Dataset
from .summary import PosteriorAccumulator

log = logging.getLogger(__name__)

CONVERGENCE_GAP = 0.01


@dataclass
class McmcConfig:
    iterations: int = 120_000
    burn_in: int = 20_000
    edge_prior: float = 0.2
    seed: int = 0
    thin: int = 1
    chains: int = 1
    proposals_per_iteration: int | None = None
    df: float = 3.0
    scale: float = 1.0
    debug: bool = False

    def validate(self) -> "McmcConfig":
        problems = []
        if self.iterations < 1:
            problems.append("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            problems.append("burn_in must satisfy 0 <= burn_in < iterations")
        if not 0.0 < self.edge_prior < 1.0:
            problems.append("edge_prior must lie strictly between 0 and 1")
        if self.thin < 1:
            problems.append("thin must be at least 1")
        if self.chains < 1:
            problems.append("chains must be at least 1")
        if self.proposals_per_iteration is not None and self.proposals_per_iteration < 0:
            problems.append("proposals_per_iteration must be non-negative")
        if not self.df > 2:
            problems.append("df must exceed 2")
        if not self.scale > 0:
            problems.append("scale must be positive")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        if problems:
            raise ConfigInvalid("; ".join(problems), problems=problems)
        return self

    @property
    def retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def prior_params(self, p: int) -> GWishartParams:
        return GWishartParams(b=self.df, D=self.scale * np.eye(p))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainState:
    g: Graph
    k: np.ndarray
    latent: LatentState
    iteration: int = 0

    def check(self) -> None:
        if not respects_pattern(self.k, self.g):
            raise AssertionError("K violates the zero pattern of G")
        try:
            np.linalg.cholesky(self.k)
        except np.linalg.LinAlgError:
            raise AssertionError("K is not positive definite") from None


def log_graph_prior(g: Graph, edge_prior: float) -> float:
    """Independent Bernoulli(edge_prior) inclusion for every pair."""
    e = g.n_edges
    return e * np.log(edge_prior) + (g.n_pairs - e) * np.log1p(-edge_prior)


def propose_edge_flip(g: Graph, rng: np.random.Generator):
    """Toggle one uniformly chosen pair.  Returns ``(new_graph, (i, j))``."""
    p = g.p
    if p < 2:
        raise ValueError("need at least two nodes")
    i, j = _pair_from_index(int(rng.integers(g.n_pairs)), p)
    return g.toggled(i, j), (i, j)


def _pair_from_index(idx: int, p: int) -> tuple[int, int]:
    i = 0
    while idx >= p - 1 - i:
        idx -= p - 1 - i
        i += 1
    return i, i + 1 + idx


def _toggle_log_ratio(k, k_aux, d_post, d_prior, adj, i, j, birth, edge_prior):
    t_post = _kernels.collapsed_toggle_terms(k, d_post, i, j, adj)
    t_aux = _kernels.collapsed_toggle_terms(k_aux, d_prior, i, j, adj)
    log_odds = np.log(edge_prior) - np.log1p(-edge_prior)
    if birth:
        return log_odds + t_post - t_aux
    return -log_odds - t_post + t_aux


def exchange_accept_logratio(
    current: ChainState,
    proposed_g: Graph,
    k_aux: np.ndarray,
    S: np.ndarray,
    n: int,
    params: GWishartParams,
    edge_prior: float,
) -> float:
    """Log acceptance ratio for moving ``current.g`` to ``proposed_g``.

    ``k_aux`` must be a fresh draw from ``W_{proposed_g}(b, D)``.  ``n`` enters
    only through ``S``; the ratio is free of any G-Wishart normalizing
    constant.
    """
    diff = np.argwhere(np.triu(current.g.adj != proposed_g.adj, 1))
    if len(diff) == 0:
        return 0.0
    if len(diff) != 1:
        raise ValueError("proposed graph must differ from the current one by a single edge")
    i, j = (int(v) for v in diff[0])
    for mat, name in ((current.k, "current K"), (k_aux, "auxiliary K")):
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            raise NotSPD(f"{name} is not positive definite") from None
    d_post = params.D + np.asarray(S, dtype=float)
    birth = bool(proposed_g.adj[i, j])
    return float(
        _toggle_log_ratio(current.k, k_aux, d_post, params.D, current.g.adj, i, j, birth, edge_prior)
    )


def toggle_precision(k, d_post, i, j, new_g: Graph, rng):
    """Precision after an accepted toggle of ``(i, j)``: row and column ``j``
    redrawn from their conditional under ``new_g`` (returns a new matrix)."""
    normals = rng.standard_normal(k.shape[0] - 1)
    return _kernels.redraw_column(k, d_post, i, j, new_g.adj, normals)


@dataclass
class ChainDiagnostics:
    proposals: int = 0
    accepted: int = 0
    births_accepted: int = 0
    deaths_accepted: int = 0
    aux_draw_tries: int = 0
    max_aux_draw_tries: int = 0
    latent_underflow: int = 0
    runtime_seconds: float = 0.0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposals if self.proposals else 0.0

    def merged(self, other: "ChainDiagnostics") -> "ChainDiagnostics":
        return ChainDiagnostics(
            proposals=self.proposals + other.proposals,
            accepted=self.accepted + other.accepted,
            births_accepted=self.births_accepted + other.births_accepted,
            deaths_accepted=self.deaths_accepted + other.deaths_accepted,
            aux_draw_tries=self.aux_draw_tries + other.aux_draw_tries,
            max_aux_draw_tries=max(self.max_aux_draw_tries, other.max_aux_draw_tries),
            latent_underflow=self.latent_underflow + other.latent_underflow,
            runtime_seconds=self.runtime_seconds + other.runtime_seconds,
        )

    def to_dict(self) -> dict:
        return {**asdict(self), "acceptance_rate": self.acceptance_rate}


def _chain_seed(seed: int, chain_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(chain_index,))


class ChainRunner:
    """A single MCMC chain with resumable state."""

    def __init__(
        self,
        latent: LatentState,
        cfg: McmcConfig,
        params: GWishartParams | None = None,
        chain_index: int = 0,
    ):
        self.cfg = cfg.validate()
        p = latent.p
        if p < 2:
            raise ConfigInvalid("need at least two variables")
        self.params = params if params is not None else cfg.prior_params(p)
        self.chain_index = chain_index
        self.rng = np.random.Generator(np.random.PCG64(_chain_seed(cfg.seed, chain_index)))
        self._set_pairs(p)
        self.diagnostics = ChainDiagnostics()
        self.first = PosteriorAccumulator(p)
        self.second = PosteriorAccumulator(p)
        self.trace = []
        self.trace_every = max(1, cfg.retained // 200)
        self._running_counts = np.zeros((p, p), dtype=np.int64)
        self._retained_seen = 0
        self.latent = latent
        self._refresh_scatter()
        g = Graph.empty(p)
        k = sample_gwishart(g, self.post_params, self.rng)
        self.state = ChainState(g=g, k=k, latent=latent, iteration=0)

    @property
    def p(self) -> int:
        return self.latent.p

    def _set_pairs(self, p: int) -> None:
        self.pairs = all_pairs(p)
        self._pair_i = np.array([i for i, _ in self.pairs], dtype=np.int64)
        self._pair_j = np.array([j for _, j in self.pairs], dtype=np.int64)

    def _refresh_scatter(self) -> None:
        z = self.latent.z
        self.S = z.T @ z
        self.post_params = self.params.posterior(self.S, self.latent.n)

    def _edge_sweep(self) -> None:
        st = self.state
        m = self.cfg.proposals_per_iteration
        if m is None:
            idx = np.arange(len(self.pairs))
        elif m == 0:
            return
        else:
            idx = self.rng.integers(len(self.pairs), size=m)
        n_moves = len(idx)
        q = self.cfg.edge_prior
        adj = st.g.adj.copy()
        k, stats = _kernels.edge_sweep(
            self.rng, st.k, adj, self.post_params.D, self.params.D, float(self.params.b),
            self._pair_i[idx], self._pair_j[idx], np.log(q) - np.log1p(-q), MAX_EXACT_TRIES,
        )
        accepted, births, deaths, max_tries, tries, status, failed_at = (int(v) for v in stats)
        d = self.diagnostics
        d.proposals += n_moves if status == 0 else failed_at + 1
        d.accepted += accepted
        d.births_accepted += births
        d.deaths_accepted += deaths
        d.aux_draw_tries += tries
        d.max_aux_draw_tries = max(d.max_aux_draw_tries, max_tries)
        if status == 1:
            raise CompletionNotConverged(
                f"auxiliary G-Wishart draw accepted nothing in {MAX_EXACT_TRIES} proposals",
                iteration=st.iteration,
            )
        st.k = k
        if accepted:
            st.g = Graph.from_adjacency(adj)

    def step(self) -> None:
        st = self.state
        self._edge_sweep()
        st.k = _kernels.precision_gibbs(
            self.rng, st.k, st.g.adj, self.post_params.D, float(self.post_params.b)
        )
        if self.latent.is_latent_column.any():
            before = self.latent.n_underflow
            resample_latent(self.latent, st.k, self.rng)
            st.k = latent_group_moves(
                self.latent, st.k, st.g.adj, self.params.b, self.params.D, self.rng
            )
            self.diagnostics.latent_underflow += self.latent.n_underflow - before
            self._refresh_scatter()
        t = st.iteration
        st.iteration += 1
        if t >= self.cfg.burn_in and (t - self.cfg.burn_in) % self.cfg.thin == 0:
            self._retain()

    def _retain(self) -> None:
        st = self.state
        if self.cfg.debug:
            st.check()
        half = self.cfg.retained // 2
        target = self.first if self._retained_seen < half else self.second
        target.push(st.g.adj, st.k)
        self._retained_seen += 1
        self._running_counts += st.g.adj
        if self._retained_seen % self.trace_every == 0:
            iu = np.triu_indices(self.p, 1)
            self.trace.append((self._retained_seen, self._running_counts[iu] / self._retained_seen))

    def run(self, until: int | None = None, checkpoint_path=None, checkpoint_every: int = 0) -> None:
        stop = self.cfg.iterations if until is None else min(until, self.cfg.iterations)
        start = time.perf_counter()
        last_log = start
        while self.state.iteration < stop:
            self.step()
            it = self.state.iteration
            if checkpoint_path and checkpoint_every and it % checkpoint_every == 0:
                self.diagnostics.runtime_seconds += time.perf_counter() - start
                start = time.perf_counter()
                save_checkpoint(checkpoint_path, self.to_checkpoint())
            now = time.perf_counter()
            if now - last_log > 10:
                last_log = now
                log.info(
                    "chain %d: iteration %d/%d (%d edge proposals, acceptance %.3f)",
                    self.chain_index, it, self.cfg.iterations,
                    self.diagnostics.proposals, self.diagnostics.acceptance_rate,
                )
        self.diagnostics.runtime_seconds += time.perf_counter() - start
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.to_checkpoint())

    @property
    def done(self) -> bool:
        return self.state.iteration >= self.cfg.iterations

    def accumulator(self) -> PosteriorAccumulator:
        acc = self.first.merged(self.second)
        acc.trace = list(self.trace)
        acc.trace_every = self.trace_every
        return acc

    def to_checkpoint(self) -> dict:
        st = self.state
        return {
            "config": self.cfg.to_dict(),
            "chain_index": self.chain_index,
            "b": self.params.b,
            "D": self.params.D,
            "iteration": st.iteration,
            "adjacency": st.g.adj.astype(np.uint8),
            "k": st.k,
            "z": self.latent.z,
            "n_underflow": self.latent.n_underflow,
            "rng_state": self.rng.bit_generator.state,
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "trace_counts": np.array([c for c, _ in self.trace], dtype=np.int64),
            "trace_values": (
                np.array([v for _, v in self.trace])
                if self.trace
                else np.zeros((0, len(self.pairs)))
            ),
            "running_counts": self._running_counts,
            "retained_seen": self._retained_seen,
            "diagnostics": asdict(self.diagnostics),
        }

    @classmethod
    def from_checkpoint(cls, payload: dict, latent: LatentState) -> "ChainRunner":
        """Rebuild a runner; ``latent`` must come from the same dataset."""
        cfg = McmcConfig(**payload["config"])
        if latent.z.shape != payload["z"].shape:
            raise CheckpointError("checkpoint does not match the supplied data")
        params = GWishartParams(b=float(payload["b"]), D=payload["D"])
        runner = cls.__new__(cls)
        runner.cfg = cfg.validate()
        runner.params = params
        runner.chain_index = int(payload["chain_index"])
        runner.rng = np.random.Generator(np.random.PCG64())
        runner.rng.bit_generator.state = payload["rng_state"]
        runner._set_pairs(latent.p)
        runner.diagnostics = ChainDiagnostics(**payload["diagnostics"])
        runner.first = PosteriorAccumulator.from_dict(payload["first"])
        runner.second = PosteriorAccumulator.from_dict(payload["second"])
        runner.trace = [
            (int(c), np.asarray(v)) for c, v in zip(payload["trace_counts"], payload["trace_values"])
        ]
        runner.trace_every = max(1, cfg.retained // 200)
        runner._running_counts = np.asarray(payload["running_counts"], dtype=np.int64)
        runner._retained_seen = int(payload["retained_seen"])
        latent = latent.copy()
        latent.z = np.array(payload["z"], dtype=float)
        latent.n_underflow = int(payload["n_underflow"])
        runner.latent = latent
        runner._refresh_scatter()
        g = Graph.from_adjacency(payload["adjacency"].astype(bool))
        runner.state = ChainState(
            g=g, k=np.array(payload["k"], dtype=float), latent=latent,
            iteration=int(payload["iteration"]),
        )
        return runner


@dataclass
class ChainResult:
    accumulator: PosteriorAccumulator
    first_half: PosteriorAccumulator
    second_half: PosteriorAccumulator
    diagnostics: ChainDiagnostics
    config: McmcConfig
    final_states: list = field(default_factory=list)


def _run_one(latent, cfg, params, chain_index, checkpoint_path, checkpoint_every):
    runner = ChainRunner(latent, cfg, params, chain_index)
    runner.run(checkpoint_path=checkpoint_path, checkpoint_every=checkpoint_every)
    return runner.first, runner.second, runner.accumulator(), runner.diagnostics, runner.state


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GCGM_THREADS", "1")))
    except ValueError:
        return 1


def sample_posterior(
    latent: LatentState,
    cfg: McmcConfig,
    params: GWishartParams | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
) -> ChainResult:
    """Run ``cfg.chains`` independent chains and merge their accumulators.

    Chain ``c`` draws from ``SeedSequence(seed, spawn_key=(c,))`` so results do
    not depend on how many workers run them.
    """
    cfg.validate()
    jobs = []
    for c in range(cfg.chains):
        ckpt = Path(checkpoint_dir) / f"chain{c}.ckpt.json" if checkpoint_dir else None
        jobs.append((latent.copy(), cfg, params, c, ckpt, checkpoint_every))
    workers = min(worker_count(), cfg.chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*job) for job in jobs]
    return _combine(results, cfg)


def _combine(results, cfg) -> ChainResult:
    first, second, full, diag, state = results[0]
    states = [state]
    for f, s, a, d, st in results[1:]:
        first = first.merged(f)
        second = second.merged(s)
        full = full.merged(a)
        diag = diag.merged(d)
        states.append(st)
    if len(results) > 1:
        full.trace = list(results[0][2].trace)
    return ChainResult(full, first, second, diag, cfg, states)


def resume_chain(checkpoint_path, latent: LatentState, checkpoint_every: int = 0) -> ChainResult:
    """Continue a single chain from a checkpoint file to its configured length."""
    runner = ChainRunner.from_checkpoint(load_checkpoint(checkpoint_path), latent)
    runner.run(checkpoint_path=checkpoint_path, checkpoint_every=checkpoint_every)
    return ChainResult(
        runner.accumulator(), runner.first, runner.second, runner.diagnostics, runner.cfg,
        [runner.state],
    )


def sample_chain(ds: Dataset, cfg: McmcConfig, params: GWishartParams | None = None, **kwargs) -> ChainResult:
    return sample_posterior(initialize_latent(ds), cfg, params, **kwargs)


def run_chain(ds: Dataset, cfg: McmcConfig, params: GWishartParams | None = None) -> PosteriorAccumulator:
    """Fit the copula graphical model to ``ds``; return the merged accumulator."""
    return sample_chain(ds, cfg, params).accumulator


def prior_latent(p: int) -> LatentState:
    """A data-free latent state (n = 0) for sampling the prior."""
    return LatentState.from_scores(np.zeros((0, p)))


@dataclass
class ConvergenceReport:
    max_abs_diff: float | None
    worst_pair: tuple[int, int] | None
    threshold: float
    converged: bool
    first_half_samples: int
    second_half_samples: int
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "max_abs_diff": self.max_abs_diff,
            "worst_pair": list(self.worst_pair) if self.worst_pair else None,
            "threshold": self.threshold,
            "converged": self.converged,
            "first_half_samples": self.first_half_samples,
            "second_half_samples": self.second_half_samples,
        }


def convergence_report(
    acc_first_half: PosteriorAccumulator,
    acc_second_half: PosteriorAccumulator,
    threshold: float = CONVERGENCE_GAP,
    trace=None,
) -> ConvergenceReport:
    """Compare edge probabilities between the two halves of the retained samples.

    With fewer than two retained samples a half is empty; the gap is then
    unknown (``None``) and the chain is reported as not converged.
    """
    if trace is None:
        trace = list(acc_first_half.trace) + list(acc_second_half.trace)
    if acc_first_half.sample_count == 0 or acc_second_half.sample_count == 0:
        return ConvergenceReport(
            max_abs_diff=None,
            worst_pair=None,
            threshold=threshold,
            converged=False,
            first_half_samples=acc_first_half.sample_count,
            second_half_samples=acc_second_half.sample_count,
            trace=trace,
        )
    a = acc_first_half.edge_probabilities()
    b = acc_second_half.edge_probabilities()
    diff = np.abs(a - b)
    iu = np.triu_indices(diff.shape[0], 1)
    if iu[0].size == 0:
        gap, worst = 0.0, None
    else:
        k = int(np.argmax(diff[iu]))
        gap, worst = float(diff[iu][k]), (int(iu[0][k]), int(iu[1][k]))
    return ConvergenceReport(
        max_abs_diff=gap,
        worst_pair=worst,
        threshold=threshold,
        converged=gap <= threshold,
        first_half_samples=acc_first_half.sample_count,
        second_half_samples=acc_second_half.sample_count,
        trace=trace,
    )


def report_for(result: ChainResult, threshold: float = CONVERGENCE_GAP) -> ConvergenceReport:
    return convergence_report(
        result.first_half, result.second_half, threshold, trace=result.accumulator.trace
    )
