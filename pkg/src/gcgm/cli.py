"""Command-line front end: ``gcgm fit | simulate | oracle | compare``.

Data products go to files only; progress logs and error records go to stderr.
On failure the last stderr line is a JSON object ``{"error": <code>, ...}``
and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigInvalid, GCGMError, UnsupportedDimension
from .export import (
    OutputWriter,
    fmt,
    safe_dirname,
    schema_hash,
    validate_manifest,
    write_fit_outputs,
)
from .gwishart import GWishartParams
from .mcmc import McmcConfig, report_for, sample_chain
from .schema_io import Dataset, load_dataset, split_by_group
from .summary import (
    comparison_report,
    parcor_matrix,
    pearson_baseline,
    probability_matrix,
    summarize,
    threshold_network,
)
from .synthetic import (
    SyntheticSpec,
    exact_graph_posterior,
    exact_posterior_p3,
    generate,
    load_truth,
    oracle_scores,
    score_probabilities,
    write_fixture,
)

log = logging.getLogger("gcgm")

DEFAULT_THRESHOLD = 0.5
DEFAULT_ALPHA = 0.05
ORACLE_TOLERANCE = 0.02
_CONFIG_FIELDS = [f.name for f in fields(McmcConfig) if f.name != "debug"]
_EXTRA_FIELDS = {"threshold": DEFAULT_THRESHOLD, "alpha": DEFAULT_ALPHA}


def _add_mcmc_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--iterations", type=int, help="total MCMC iterations (default 120000)")
    ap.add_argument("--burn-in", type=int, help="iterations discarded before accumulating (default 20000)")
    ap.add_argument("--edge-prior", type=float, help="prior edge inclusion probability (default 0.2)")
    ap.add_argument("--seed", type=int, help="master RNG seed (default 0)")
    ap.add_argument("--thin", type=int, help="keep every k-th post-burn-in iteration (default 1)")
    ap.add_argument("--chains", type=int, help="independent chains to merge (default 1)")
    ap.add_argument("--proposals-per-iteration", type=int, help="random edge moves per iteration instead of the default sweep over all pairs")
    ap.add_argument("--df", type=float, help="G-Wishart degrees of freedom b (default 3)")
    ap.add_argument("--scale", type=float, help="G-Wishart scale D = scale * I (default 1)")
    ap.add_argument("--threshold", type=float, help="network inclusion threshold (default 0.5)")
    ap.add_argument("--alpha", type=float, help="Pearson baseline significance level (default 0.05)")
    ap.add_argument("--config", type=Path, help="JSON file of the settings above; flags take precedence")


def resolve_settings(args) -> tuple[McmcConfig, dict]:
    """Merge defaults, the optional JSON config file and explicit flags."""
    settings = {f.name: f.default for f in fields(McmcConfig) if f.name != "debug"}
    settings.update(_EXTRA_FIELDS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigInvalid("config file must contain a JSON object")
        unknown = sorted(set(loaded) - set(settings))
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}", keys=unknown)
        settings.update(loaded)
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("threshold", "alpha"):
        if not 0.0 < float(settings[key]) < 1.0:
            raise ConfigInvalid(f"{key} must lie strictly between 0 and 1")
    try:
        cfg = McmcConfig(**{k: settings[k] for k in _CONFIG_FIELDS})
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from None
    cfg.validate()
    return cfg, settings


def _config_echo(cfg: McmcConfig, settings: dict) -> dict:
    echo = {k: getattr(cfg, k) for k in _CONFIG_FIELDS}
    echo["threshold"] = float(settings["threshold"])
    echo["alpha"] = float(settings["alpha"])
    return echo


def _convergence_echo(report, labels) -> dict:
    """Convergence record with the worst pair as 1-based indices plus labels."""
    doc = report.to_dict()
    if report.worst_pair is not None:
        i, j = report.worst_pair
        doc["worst_pair"] = [i + 1, j + 1]
        doc["worst_pair_labels"] = [labels[i], labels[j]]
    return doc


def _trace_csv(trace, labels) -> str:
    p = len(labels)
    header = ["retained"] + [f"{labels[i]}--{labels[j]}" for i in range(p) for j in range(i + 1, p)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for count, values in trace:
        w.writerow([str(count)] + [fmt(v) for v in values])
    return buf.getvalue()


def fit_one(ds: Dataset, cfg: McmcConfig, settings: dict, out_dir: Path, inputs: dict) -> dict:
    """Fit one dataset, write every output file and the manifest; return the manifest."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    log.info("fitting n=%d p=%d into %s", ds.n, ds.p, out_dir)
    result = sample_chain(ds, cfg)
    acc = result.accumulator
    summaries = summarize(acc)
    labels = ds.abbreviations
    threshold = float(settings["threshold"])
    network = threshold_network(summaries, threshold, labels=labels, p=ds.p)
    parcor = parcor_matrix(summaries, ds.p, threshold)
    pearson = pearson_baseline(ds, float(settings["alpha"]))
    writer = OutputWriter(out_dir)
    write_fit_outputs(writer, acc, summaries, network, parcor, pearson, probability_matrix(summaries, ds.p), labels)
    writer.write("convergence_trace.csv", _trace_csv(acc.trace, labels))
    convergence = report_for(result)
    if not convergence.converged:
        log.warning(
            "half-vs-half edge probability gap %s exceeds %s",
            convergence.max_abs_diff, convergence.threshold,
        )
    manifest = {
        "manifest_version": 1,
        "kind": "fit",
        "tool": {"name": "gcgm", "version": __version__},
        "config": _config_echo(cfg, settings),
        "inputs": {
            **inputs,
            "schema_sha256": schema_hash(ds.schema_json()),
            "dataset_sha256": ds.content_hash(),
            "n": ds.n,
            "p": ds.p,
            "variables": labels,
        },
        "wall_clock": {"started_utc": started, "seconds": round(time.perf_counter() - t0, 3)},
        "convergence": _convergence_echo(convergence, labels),
        "diagnostics": result.diagnostics.to_dict(),
        "comparison": comparison_report(pearson, parcor),
        "outputs": writer.inventory(),
    }
    validate_manifest(manifest)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def cmd_fit(args) -> int:
    cfg, settings = resolve_settings(args)
    ds = load_dataset(args.data, args.schema)
    out = Path(args.out)
    inputs = {"data": str(args.data), "schema": str(args.schema), "group": None}
    if not args.group_by:
        fit_one(ds, cfg, settings, out, inputs)
        return 0
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    groups, used = [], set()
    writer = OutputWriter(out)
    for label, part in split_by_group(ds, args.group_by):
        name = safe_dirname(label)
        while name in used:
            name += "_"
        used.add(name)
        sub_inputs = {**inputs, "group": {"column": args.group_by, "label": str(label)}}
        manifest = fit_one(part, cfg, settings, out / name, sub_inputs)
        writer.files.append(f"{name}/manifest.json")
        groups.append({"label": str(label), "directory": name, "converged": manifest["convergence"]["converged"]})
    top = {
        "manifest_version": 1,
        "kind": "grouped-fit",
        "tool": {"name": "gcgm", "version": __version__},
        "config": _config_echo(cfg, settings),
        "group_column": args.group_by,
        "groups": groups,
        "wall_clock": {"started_utc": started, "seconds": round(time.perf_counter() - t0, 3)},
        "outputs": writer.inventory(),
    }
    validate_manifest(top)
    (out / "manifest.json").write_text(json.dumps(top, indent=2) + "\n")
    return 0


def cmd_simulate(args) -> int:
    plan = [c.strip() for c in args.column_plan.split(",")] if args.column_plan else []
    spec = SyntheticSpec(
        p=args.p, n=args.n, edge_density=args.edge_density,
        graph_seed=args.graph_seed, data_seed=args.data_seed, column_plan=plan,
    )
    ds, g, K = generate(spec)
    paths = write_fixture(args.out, args.name, spec, ds, g, K)
    log.info("wrote %s", ", ".join(paths.values()))
    return 0


def _oracle_params(args, p: int) -> GWishartParams:
    df = 3.0 if args.df is None else args.df
    return GWishartParams.default(p, df)


def cmd_oracle(args) -> int:
    ds = load_dataset(args.data, args.schema, allow_empty=True)
    if ds.p != 3:
        raise UnsupportedDimension(
            f"the exact oracle enumerates graphs on 3 variables only, got p = {ds.p}; "
            "use 'gcgm fit' for larger problems",
            p=ds.p,
        )
    params = _oracle_params(args, 3)
    data = np.zeros((0, 3)) if ds.n == 0 else ds
    probs = exact_posterior_p3(data, args.edge_prior, params)
    z = oracle_scores(data)
    graphs, weights, _ = exact_graph_posterior(z.T @ z, z.shape[0], args.edge_prior, params)
    labels = ds.abbreviations
    doc = {
        "edge_prior": args.edge_prior,
        "df": params.b,
        "n": ds.n,
        "variables": labels,
        "pairs": [
            {"i": i + 1, "j": j + 1, "pair": f"{labels[i]}--{labels[j]}", "probability": float(probs[i, j])}
            for i in range(3) for j in range(i + 1, 3)
        ],
        "graphs": [
            {"edges": [[a + 1, b + 1] for a, b in g.edges], "probability": float(w)}
            for g, w in zip(graphs, weights)
        ],
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_compare(args) -> int:
    cfg, settings = resolve_settings(args)
    ds = load_dataset(args.data, args.schema)
    oracle_ok = ds.p == 3 and not any(s.is_latent for s in ds.schema)
    if not oracle_ok and args.truth is None:
        raise UnsupportedDimension(
            "compare needs either a p = 3 all-continuous dataset (exact oracle) or --truth",
            p=ds.p,
        )
    t0 = time.perf_counter()
    result = sample_chain(ds, cfg)
    runtime = time.perf_counter() - t0
    mcmc = result.accumulator.edge_probabilities()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = ds.abbreviations
    report = {
        "config": _config_echo(cfg, settings),
        "runtime_seconds": runtime,
        "convergence": _convergence_echo(report_for(result), labels),
    }
    if oracle_ok:
        exact = exact_posterior_p3(ds, cfg.edge_prior, cfg.prior_params(3))
        rows = [["i", "j", "pair", "mcmc", "oracle", "abs_gap"]]
        gaps = []
        for i in range(3):
            for j in range(i + 1, 3):
                gap = abs(mcmc[i, j] - exact[i, j])
                gaps.append(gap)
                rows.append([str(i + 1), str(j + 1), f"{labels[i]}--{labels[j]}",
                             fmt(mcmc[i, j]), fmt(exact[i, j]), fmt(gap)])
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        (out / "gap_table.csv").write_text(buf.getvalue())
        report["oracle"] = {
            "max_gap": float(max(gaps)),
            "tolerance": args.tolerance,
            "passed": bool(max(gaps) <= args.tolerance),
        }
        log.info("max MCMC-vs-oracle gap %.4f (%s)", max(gaps), "pass" if max(gaps) <= args.tolerance else "FAIL")
    if args.truth is not None:
        g, _, _ = load_truth(args.truth)
        if g.p != ds.p:
            raise UnsupportedDimension(f"truth has p = {g.p} but data has p = {ds.p}", p=ds.p)
        report["recovery"] = score_probabilities(mcmc, g, float(settings["threshold"]), runtime).to_dict()
    (out / "compare.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gcgm", description="Bayesian Gaussian copula graphical models")
    ap.add_argument("--version", action="version", version=f"gcgm {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    ap.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a dataset and export posterior summaries")
    fit.add_argument("--data", required=True, type=Path)
    fit.add_argument("--schema", required=True, type=Path)
    fit.add_argument("--group-by", help="group-role column: fit each group separately")
    fit.add_argument("--out", required=True, type=Path)
    _add_mcmc_flags(fit)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="write a synthetic fixture (CSV, schema, truth)")
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--edge-density", type=float, required=True)
    sim.add_argument("--graph-seed", type=int, default=0)
    sim.add_argument("--data-seed", type=int, default=0)
    sim.add_argument("--column-plan", help="comma list: identity, exp, cubic, sigmoid, ordinal:k, binary")
    sim.add_argument("--out", required=True, type=Path, help="fixture directory")
    sim.add_argument("--name", default="fixture")
    sim.set_defaults(func=cmd_simulate)

    orc = sub.add_parser("oracle", help="exact edge probabilities for a 3-variable dataset")
    orc.add_argument("--data", required=True, type=Path)
    orc.add_argument("--schema", required=True, type=Path)
    orc.add_argument("--edge-prior", type=float, default=0.2)
    orc.add_argument("--df", type=float)
    orc.add_argument("--out", required=True, type=Path, help="output JSON file")
    orc.set_defaults(func=cmd_oracle)

    cmp_ = sub.add_parser("compare", help="MCMC versus the exact oracle and/or the true graph")
    cmp_.add_argument("--data", required=True, type=Path)
    cmp_.add_argument("--schema", required=True, type=Path)
    cmp_.add_argument("--truth", type=Path, help="truth JSON written by 'simulate'")
    cmp_.add_argument("--tolerance", type=float, default=ORACLE_TOLERANCE)
    cmp_.add_argument("--out", required=True, type=Path)
    _add_mcmc_flags(cmp_)
    cmp_.set_defaults(func=cmd_compare)
    return ap


def _emit_error(record: dict) -> None:
    sys.stderr.write(json.dumps(record) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GCGMError as exc:
        _emit_error(exc.to_dict())
        return 2
    except jsonschema.ValidationError as exc:
        _emit_error({"error": "ManifestInvalid", "message": exc.message})
        return 3
    except OSError as exc:
        _emit_error({"error": "IOError", "message": str(exc)})
        return 2
    except ValueError as exc:
        _emit_error({"error": "InvalidArgument", "message": str(exc)})
        return 2


if __name__ == "__main__":
    sys.exit(main())
