"""Command line entry points.

Verbs:
  fit        run a chain from a YAML config into an output directory
  simulate   draw a synthetic community plus a truth sidecar
  score      predictive scores for a finished run, optionally on new data
  summarize  regenerate posterior summary tables for a finished run
  verify     compare the sampler against exhaustive enumeration on a
             small synthetic community
  sweep      refit across a grid of split thresholds and tabulate scores

Every verb exits 0 only when it ran to completion; any failure prints a
single diagnostic line on stderr and exits 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from guildtree.bma import (
    exact_model_average_probit,
    guild_count_pmf,
    pairwise_cooccurrence,
)
from guildtree.config import (
    ChainConfig,
    load_chain_config,
    load_simulate_config,
)
from guildtree.inference import (
    coefficient_posteriors,
    cooccurrence_matrix,
    guild_count_distribution,
    lppd_holdout,
    mode_tree,
)
from guildtree.ingest import StandardizationRecord, ingest
from guildtree.persist import DRAWS_FILE, read_draws, read_manifest
from guildtree.runner import (
    apply_standardization,
    compute_scores,
    load_data,
    run_fit,
    run_simulate,
    write_summary_tables,
)
from guildtree.simulate import SimSpec, simulate

__all__ = ["main"]


def _config_from_manifest(manifest: dict) -> ChainConfig:
    from guildtree.config import chain_config_from_dict

    return chain_config_from_dict(manifest["config"])


def _load_run(run_dir):
    run = Path(run_dir)
    manifest = read_manifest(run)
    config = _config_from_manifest(manifest)
    draws = read_draws(run / DRAWS_FILE, config.species, config.family)
    if not draws:
        raise ValueError(f"{run}: draws table has no rows")
    return run, manifest, config, draws


def _cmd_fit(args) -> int:
    config = load_chain_config(args.config)
    if args.output_dir:
        config = dataclasses.replace(config, output_dir=args.output_dir)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, flush=True))
    manifest = run_fit(config, resume=args.resume, log=log)
    print(
        f"complete: {manifest['n_retained']} draws retained in "
        f"{manifest['wall_time_seconds']:.1f}s -> {config.output_dir}"
    )
    return 0


def _cmd_simulate(args) -> int:
    config = load_simulate_config(args.config)
    data_path, truth_path = run_simulate(config, out_dir=args.out_dir)
    print(f"wrote {data_path} and {truth_path}")
    return 0


def _cmd_score(args) -> int:
    run, manifest, config, draws = _load_run(args.run_dir)
    record = StandardizationRecord(
        applied=manifest["standardization"]["applied"],
        center=tuple(manifest["standardization"]["center"]),
        scale=tuple(manifest["standardization"]["scale"]),
    )
    if args.data:
        raw, _ = ingest(
            args.data, config.species, config.predictors, config.family,
            standardize=False,
        )
        scored = apply_standardization(raw, record)
        # Every row of an external file is scored out of sample.
        scored = dataclasses.replace(
            scored, holdout_mask=np.ones(scored.n_sites, dtype=bool)
        )
        scores = {
            "holdout": lppd_holdout(
                draws, scored, config.family,
                n_z=config.predictive["n_z"], z_seed=config.predictive["z_seed"],
            ),
            "waic": None,
        }
    else:
        data, _ = load_data(config)
        scores = compute_scores(draws, data, config.family, config.predictive)
        with open(run / "scores.json", "w") as fh:
            json.dump(scores, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(scores, indent=2, sort_keys=True))
    return 0


def _cmd_summarize(args) -> int:
    run, manifest, config, draws = _load_run(args.run_dir)
    write_summary_tables(run, draws, config.species, config.predictors)
    n_periods = draws[0].n_periods
    print(f"{len(draws)} draws, {n_periods} period(s)")
    for t in range(n_periods):
        mode = mode_tree(draws, config.species, t)
        pmf = guild_count_distribution(draws, t)
        top = int(np.argmax(pmf)) + 1
        print(
            f"period {t + 1}: modal partition {mode.encoding} "
            f"(freq {mode.frequency:.3f}), most probable guild count {top} "
            f"(prob {pmf[top - 1]:.3f})"
        )
    print(f"summary tables written to {run}")
    return 0


def _cmd_verify(args) -> int:
    from guildtree.learner import LearnerConfig
    from guildtree.probit import run_chain_probit

    j = args.species
    groups = (tuple(range(j // 2)), tuple(range(j // 2, j)))
    spec = SimSpec(
        n_sites=args.sites,
        n_species=j,
        n_predictors=1,
        family="probit",
        groups=(groups,),
        alpha=tuple([0.0] * j),
        gammas=(np.array([[-1.0], [1.0]]),),
    )
    sim = simulate(spec, seed=args.seed)
    data = sim.data
    print(
        f"verify: {j} species, {args.sites} sites, "
        f"{args.iterations} sweeps vs exhaustive enumeration", flush=True,
    )
    draws = run_chain_probit(
        data,
        iterations=args.iterations,
        thin=args.thin,
        burn=args.burn,
        learner=LearnerConfig(alpha=args.alpha),
        seed=args.seed,
    )
    reference = exact_model_average_probit(data, seed=args.seed)

    post = coefficient_posteriors(draws)
    engine_beta = post["beta_mean"][:, 0]
    ref_beta = reference.species_beta_mean[:, 0]
    engine_pmf = guild_count_distribution(draws)
    ref_pmf = guild_count_pmf(reference)
    engine_co = cooccurrence_matrix(draws)
    ref_co = pairwise_cooccurrence(reference)

    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    report = out / "verify_report.csv"
    with open(report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "item", "engine", "reference", "abs_diff"])
        for jj, name in enumerate(data.species_names):
            w.writerow(
                ["beta_mean", name, repr(float(engine_beta[jj])),
                 repr(float(ref_beta[jj])),
                 repr(float(abs(engine_beta[jj] - ref_beta[jj])))]
            )
        for g in range(j):
            w.writerow(
                ["guild_count_prob", g + 1, repr(float(engine_pmf[g])),
                 repr(float(ref_pmf[g])),
                 repr(float(abs(engine_pmf[g] - ref_pmf[g])))]
            )
        for a in range(j):
            for b in range(a + 1, j):
                pair = f"{data.species_names[a]}~{data.species_names[b]}"
                w.writerow(
                    ["cooccurrence", pair, repr(float(engine_co[a, b])),
                     repr(float(ref_co[a, b])),
                     repr(float(abs(engine_co[a, b] - ref_co[a, b])))]
                )
    beta_gap = float(np.max(np.abs(engine_beta - ref_beta)))
    pmf_gap = float(np.max(np.abs(engine_pmf - ref_pmf)))
    co_gap = float(np.max(np.abs(engine_co - ref_co)))
    print(f"max |beta mean difference|:        {beta_gap:.4f}")
    print(f"max |guild count prob difference|: {pmf_gap:.4f}")
    print(f"max |cooccurrence difference|:     {co_gap:.4f}")
    print(f"report written to {report}")
    if not all(map(np.isfinite, (beta_gap, pmf_gap, co_gap))):
        raise RuntimeError("verification produced non-finite differences")
    return 0


def _cmd_sweep(args) -> int:
    config = load_chain_config(args.config)
    base_out = Path(args.output_dir) if args.output_dir else Path(config.output_dir)
    base_out.mkdir(parents=True, exist_ok=True)
    rows = []
    for a in args.alphas:
        sub = dataclasses.replace(
            config, alpha=a, output_dir=str(base_out / f"alpha={a:g}")
        )
        print(f"fitting alpha={a:g} -> {sub.output_dir}", flush=True)
        manifest = run_fit(sub)
        scores = manifest["scores"]
        w = scores.get("waic") or {}
        h = scores.get("holdout") or {}
        rows.append(
            {
                "alpha": a,
                "waic": w.get("waic"),
                "lppd": w.get("lppd"),
                "p_eff": w.get("p_eff"),
                "holdout_score": h.get("score"),
                "n_retained": manifest["n_retained"],
            }
        )
    table = base_out / "sweep.csv"
    fields = ["alpha", "waic", "lppd", "p_eff", "holdout_score", "n_retained"]
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    print(f"{'alpha':>8} {'waic':>12} {'holdout':>12}")
    for row in rows:
        waic_s = "-" if row["waic"] is None else f"{row['waic']:.2f}"
        hold_s = "-" if row["holdout_score"] is None else f"{row['holdout_score']:.2f}"
        print(f"{row['alpha']:>8g} {waic_s:>12} {hold_s:>12}")
    print(f"sweep table written to {table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guildtree",
        description="Multi-species distribution models with tree-structured "
        "guild shrinkage.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_fit = sub.add_parser("fit", help="run a chain from a YAML config")
    p_fit.add_argument("config", help="path to the YAML run config")
    p_fit.add_argument("--output-dir", help="override the config output_dir")
    p_fit.add_argument(
        "--resume", action="store_true",
        help="continue from the checkpoint in the output directory",
    )
    p_fit.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p_fit.set_defaults(func=_cmd_fit)

    p_sim = sub.add_parser("simulate", help="draw a synthetic community")
    p_sim.add_argument("config", help="path to the YAML simulation config")
    p_sim.add_argument("--out-dir", default=".", help="directory for the outputs")
    p_sim.set_defaults(func=_cmd_simulate)

    p_score = sub.add_parser("score", help="predictive scores for a finished run")
    p_score.add_argument("run_dir", help="output directory of a finished fit")
    p_score.add_argument(
        "--data", nargs="+",
        help="score these CSV files out of sample instead of the run's data",
    )
    p_score.set_defaults(func=_cmd_score)

    p_sum = sub.add_parser("summarize", help="regenerate posterior summaries")
    p_sum.add_argument("run_dir", help="output directory of a finished fit")
    p_sum.set_defaults(func=_cmd_summarize)

    p_ver = sub.add_parser(
        "verify",
        help="compare the sampler against exhaustive enumeration",
    )
    p_ver.add_argument("--species", type=int, default=3)
    p_ver.add_argument("--sites", type=int, default=150)
    p_ver.add_argument("--iterations", type=int, default=6000)
    p_ver.add_argument("--thin", type=int, default=5)
    p_ver.add_argument("--burn", type=int, default=200)
    p_ver.add_argument("--alpha", type=float, default=0.05)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", help="directory for verify_report.csv")
    p_ver.set_defaults(func=_cmd_verify)

    p_sweep = sub.add_parser(
        "sweep", help="refit across a grid of split thresholds"
    )
    p_sweep.add_argument("config", help="path to the YAML run config")
    p_sweep.add_argument(
        "--alphas", type=float, nargs="+", required=True,
        help="split threshold grid, each in [0, 1]",
    )
    p_sweep.add_argument("--output-dir", help="parent directory for the grid runs")
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
