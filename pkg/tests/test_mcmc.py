import numpy as np
import pytest

from gcgm.errors import ConfigInvalid
from gcgm.gwishart import Graph, GWishartParams, sample_gwishart
from gcgm.mcmc import (
    ChainRunner,
    ChainState,
    McmcConfig,
    convergence_report,
    exchange_accept_logratio,
    log_graph_prior,
    prior_latent,
    propose_edge_flip,
    report_for,
    resume_chain,
    run_chain,
    sample_chain,
    sample_posterior,
)
from gcgm.copula import initialize_latent
from gcgm.schema_io import load_dataset
from gcgm.summary import PosteriorAccumulator
from gcgm.synthetic import SyntheticSpec, exact_posterior_p3, generate

from conftest import MIXED_FIXTURE, continuous_dataset, fixture_paths


def test_graph_prior_values():
    assert log_graph_prior(Graph.empty(19), 0.2) == pytest.approx(171 * np.log(0.8), abs=1e-10)
    assert log_graph_prior(Graph.complete(2), 0.5) == pytest.approx(np.log(0.5), abs=1e-15)
    g = Graph(5, [(0, 1), (2, 4)])
    assert log_graph_prior(g.toggled(1, 3), 0.2) - log_graph_prior(g, 0.2) == pytest.approx(np.log(0.25))


def test_flip_on_two_nodes_and_from_empty():
    rng = np.random.default_rng(0)
    g = Graph.empty(2)
    for _ in range(5):
        new, pair = propose_edge_flip(g, rng)
        assert pair == (0, 1) and new.n_edges == 1 - g.n_edges
        g = new
    empty = Graph.empty(6)
    for _ in range(50):
        new, _ = propose_edge_flip(empty, rng)
        assert new.n_edges == 1


def test_flip_is_uniform_over_pairs():
    rng = np.random.default_rng(1)
    g = Graph.empty(5)
    counts = {}
    for _ in range(100_000):
        _, pair = propose_edge_flip(g, rng)
        counts[pair] = counts.get(pair, 0) + 1
    assert len(counts) == 10
    assert all(abs(c - 10_000) <= 300 for c in counts.values())


def _state(p, edges, seed):
    g = Graph(p, edges)
    k = sample_gwishart(g, GWishartParams.default(p), np.random.default_rng(seed), method="exact")
    return ChainState(g=g, k=k, latent=prior_latent(p))


def test_exchange_identity_proposal():
    st = _state(3, [(0, 1)], 0)
    params = GWishartParams.default(3)
    assert exchange_accept_logratio(st, st.g, st.k, np.zeros((3, 3)), 0, params, 0.2) == 0.0


def test_exchange_without_data_reduces_to_prior_odds():
    st = _state(4, [(0, 1), (1, 2)], 1)
    params = GWishartParams.default(4)
    proposed = st.g.toggled(2, 3)
    # with S = 0 and the auxiliary draw equal to K the likelihood terms cancel
    r = exchange_accept_logratio(st, proposed, st.k, np.zeros((4, 4)), 0, params, 0.2)
    assert r == pytest.approx(np.log(0.25), abs=1e-12)


def test_exchange_birth_death_antisymmetric():
    rng = np.random.default_rng(2)
    params = GWishartParams.default(4)
    z = rng.standard_normal((30, 4))
    S = z.T @ z
    base = Graph(4, [(0, 1), (1, 2), (2, 3)])
    with_edge = base.toggled(0, 3)
    k = sample_gwishart(with_edge, params.posterior(S, 30), rng, method="exact")
    k_aux = sample_gwishart(with_edge, params, rng, method="exact")
    birth = exchange_accept_logratio(ChainState(base, k, prior_latent(4)), with_edge, k_aux, S, 30, params, 0.2)
    death = exchange_accept_logratio(ChainState(with_edge, k, prior_latent(4)), base, k_aux, S, 30, params, 0.2)
    assert birth == pytest.approx(-death, abs=1e-10)


def test_exchange_rejects_multi_edge_proposals():
    st = _state(4, [], 3)
    with pytest.raises(ValueError):
        exchange_accept_logratio(st, Graph(4, [(0, 1), (2, 3)]), st.k, np.zeros((4, 4)), 0, GWishartParams.default(4), 0.2)


def test_config_defaults_and_validation():
    cfg = McmcConfig()
    assert (cfg.iterations, cfg.burn_in, cfg.retained, cfg.edge_prior) == (120_000, 20_000, 100_000, 0.2)
    for bad in (dict(burn_in=120_000), dict(edge_prior=1.0), dict(iterations=0), dict(thin=0), dict(df=2.0)):
        with pytest.raises(ConfigInvalid):
            McmcConfig(**bad).validate()


def test_p3_oracle_short_run():
    ds = load_dataset(*fixture_paths("gauss_p3_n50"))
    exact = exact_posterior_p3(ds)
    probs = run_chain(ds, McmcConfig(iterations=40_000, burn_in=5_000, seed=4)).edge_probabilities()
    assert np.abs(probs - exact).max() <= 0.02


def _small_data(p=4, n=80):
    ds, g, _ = generate(SyntheticSpec(p=p, n=n, edge_density=0.5, graph_seed=3, data_seed=4))
    return ds, g


def test_same_seed_same_result():
    ds, _ = _small_data()
    cfg = McmcConfig(iterations=3_000, burn_in=500, seed=9)
    a, b = sample_chain(ds, cfg), sample_chain(ds, cfg)
    for field in ("edge_counts", "parcor_sum", "parcor_sumsq", "parcor_hist"):
        np.testing.assert_array_equal(getattr(a.accumulator, field), getattr(b.accumulator, field))
    other = sample_chain(ds, McmcConfig(iterations=3_000, burn_in=500, seed=10))
    assert not np.array_equal(a.accumulator.parcor_sum, other.accumulator.parcor_sum)


def test_debug_mode_checks_every_retained_state():
    ds, _ = _small_data()
    res = sample_chain(ds, McmcConfig(iterations=400, burn_in=100, debug=True))
    assert res.accumulator.sample_count == 300


def test_multiple_chains_merge():
    ds, _ = _small_data()
    cfg = McmcConfig(iterations=1_000, burn_in=200, chains=3)
    res = sample_chain(ds, cfg)
    assert res.accumulator.sample_count == 3 * 800
    single = sample_chain(ds, McmcConfig(iterations=1_000, burn_in=200, chains=1))
    # chain 0 of the multi-chain run is the single-chain run
    assert res.final_states[0].iteration == single.final_states[0].iteration
    np.testing.assert_array_equal(res.final_states[0].k, single.final_states[0].k)


def test_checkpoint_resume_is_seamless(tmp_path):
    ds, _ = _small_data()
    latent = initialize_latent(ds)
    cfg = McmcConfig(iterations=2_000, burn_in=400, seed=5)
    full = sample_posterior(latent, cfg)
    runner = ChainRunner(latent.copy(), cfg)
    path = tmp_path / "chain.ckpt.json"
    runner.run(until=1_111, checkpoint_path=path)
    resumed = resume_chain(path, latent.copy())
    for field in ("edge_counts", "parcor_sum", "parcor_hist", "parcor_min"):
        np.testing.assert_array_equal(getattr(resumed.accumulator, field), getattr(full.accumulator, field))
    np.testing.assert_array_equal(resumed.final_states[0].k, full.final_states[0].k)
    assert resumed.diagnostics.proposals == full.diagnostics.proposals


def test_convergence_identical_halves():
    acc = PosteriorAccumulator(3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        adj = np.triu(rng.random((3, 3)) < 0.5, 1)
        acc.push(adj | adj.T, np.eye(3))
    rep = convergence_report(acc, acc)
    assert rep.max_abs_diff == 0.0 and rep.converged


def test_convergence_empty_half_not_converged():
    rep = convergence_report(PosteriorAccumulator(3), PosteriorAccumulator(3))
    assert rep.max_abs_diff is None and not rep.converged


def test_prior_run_recovers_edge_prior_and_passes():
    res = sample_posterior(prior_latent(3), McmcConfig(iterations=60_000, burn_in=1_000, seed=2))
    probs = res.accumulator.edge_probabilities()
    assert np.abs(probs[np.triu_indices(3, 1)] - 0.2).max() < 0.01
    assert report_for(res).converged


def test_short_run_flagged():
    ds = load_dataset(*fixture_paths(MIXED_FIXTURE))
    rep = report_for(sample_chain(ds, McmcConfig(iterations=100, burn_in=20)))
    assert not rep.converged and rep.max_abs_diff > 0.01


def _indicator_run(ds, seed, iterations=24_000, burn_in=2_000):
    runner = ChainRunner(initialize_latent(ds), McmcConfig(iterations=iterations, burn_in=burn_in, seed=seed))
    iu = np.triu_indices(ds.p, 1)
    rows = []
    while not runner.done:
        runner.step()
        if runner.state.iteration > burn_in:
            rows.append(runner.state.g.adj[iu])
    ind = np.array(rows, dtype=float)
    batches = ind.reshape(50, -1, ind.shape[1]).mean(axis=1)
    return ind.mean(axis=0), batches.std(axis=0, ddof=1) / np.sqrt(50)


def test_permutation_equivariance():
    ds, _ = _small_data(p=4, n=60)
    perm = np.array([2, 0, 3, 1])
    permuted = continuous_dataset(ds.values[:, perm])
    mean, se = _indicator_run(ds, 1)
    pmean, pse = _indicator_run(permuted, 2)
    p = ds.p
    iu = np.triu_indices(p, 1)
    a = np.zeros((p, p))
    a[iu] = mean
    a = a + a.T
    b = np.zeros((p, p))
    b[iu] = pmean
    b = b + b.T
    sa = np.zeros((p, p))
    sa[iu] = se
    sa = sa + sa.T
    sb = np.zeros((p, p))
    sb[iu] = pse
    sb = sb + sb.T
    # node k of the permuted data is node perm[k] of the original
    diff = np.abs(b - a[np.ix_(perm, perm)])[iu]
    tol = 3 * np.hypot(sb, sa[np.ix_(perm, perm)])[iu]
    assert np.all(diff <= np.maximum(tol, 1e-12))
