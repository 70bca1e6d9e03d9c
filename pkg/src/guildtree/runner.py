"""Run orchestration shared by the command line and by tests.

A fit run owns one output directory: draws.csv (retained draws),
checkpoint files while running, summary tables, scores.json, and
manifest.json recording the full config, a content checksum of the data,
wall time, and trace diagnostics.  Resume picks up from the last
checkpoint and reproduces exactly the rows an uninterrupted run would
have written.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import json
import time
from collections import Counter
from pathlib import Path

import numpy as np

from guildtree.config import ChainConfig, SimulateConfig
from guildtree.core import CommunityData, encode_partition
from guildtree.inference import (
    cooccurrence_matrix,
    guild_count_distribution,
    lppd_holdout,
    mode_tree,
    trace_stats,
    waic,
)
from guildtree.ingest import StandardizationRecord, ingest
from guildtree.learner import LearnerConfig
from guildtree.persist import (
    DRAWS_FILE,
    DrawWriter,
    data_checksum,
    has_checkpoint,
    load_checkpoint,
    read_draws,
    read_manifest,
    save_checkpoint,
    truncate_draws,
    write_manifest,
)
from guildtree.probit import ProbitPriors, init_probit_state, run_chain_probit
from guildtree.simulate import SimSpec, simulate
from guildtree.zip_poisson import ZipPriors, init_zip_state, run_chain_zip

__all__ = [
    "load_data",
    "priors_from_config",
    "learner_from_config",
    "run_fit",
    "write_summary_tables",
    "compute_scores",
    "run_simulate",
    "apply_standardization",
]

_MAX_MANIFEST_WARNINGS = 200


def priors_from_config(config: ChainConfig):
    if config.family == "zip":
        return ZipPriors(**config.priors)
    return ProbitPriors(**config.priors)


def learner_from_config(config: ChainConfig, n_periods: int):
    """One learner per period when alpha is a list, else a single shared one."""
    knobs = dict(config.learner)
    alphas = config.alpha_values()
    if isinstance(config.alpha, (int, float)):
        return LearnerConfig(alpha=alphas[0], **knobs)
    if len(alphas) != n_periods:
        raise ValueError(
            f"alpha list has {len(alphas)} entries but the data has "
            f"{n_periods} periods"
        )
    return [LearnerConfig(alpha=a, **knobs) for a in alphas]


def load_data(config: ChainConfig) -> tuple[CommunityData, StandardizationRecord]:
    data, record = ingest(
        config.data,
        config.species,
        config.predictors,
        config.family,
        standardize=config.standardize,
        holdout_paths=config.holdout_file,
    )
    if config.holdout_fraction > 0 and data.holdout_mask is None:
        # Holdout selection gets its own generator so the chain's stream
        # stays a pure function of the seed.
        pick = np.random.default_rng([config.seed, 1])
        n_hold = int(round(config.holdout_fraction * data.n_sites))
        n_hold = min(max(n_hold, 1), data.n_sites - 1)
        chosen = pick.choice(data.n_sites, size=n_hold, replace=False)
        mask = np.zeros(data.n_sites, dtype=bool)
        mask[chosen] = True
        data = dataclasses.replace(data, holdout_mask=mask)
    return data, record


def apply_standardization(
    data: CommunityData, record: StandardizationRecord
) -> CommunityData:
    """Rescale new predictors with the constants a fit was trained with."""
    if not record.applied:
        return data
    center = np.asarray(record.center)
    scale = np.asarray(record.scale)
    if center.shape[0] != data.n_predictors:
        raise ValueError(
            f"standardization record covers {center.shape[0]} predictors, "
            f"data has {data.n_predictors}"
        )
    return dataclasses.replace(data, predictors=(data.predictors - center) / scale)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _fmt(x: float) -> str:
    return repr(float(x))


def _diagnostics(draws, data: CommunityData) -> dict:
    """Trace mean/sd/lag-1 autocorrelation for every tracked parameter."""
    if len(draws) < 2:
        return {}
    out: dict[str, dict] = {}

    def put(name, series):
        stats = trace_stats(np.asarray(series, dtype=float))
        out[name] = {"mean": stats.mean, "sd": stats.sd, "lag1": stats.lag1}

    species = data.species_names
    predictors = data.predictor_names
    alphas = np.asarray([d.alpha for d in draws])
    for j, sp in enumerate(species):
        put(f"alpha:{sp}", alphas[:, j])
    for t in range(draws[0].n_periods):
        betas = np.asarray(
            [d.gammas[t][d.trees[t].guild_of, :] for d in draws]
        )
        for j, sp in enumerate(species):
            for k, pred in enumerate(predictors):
                put(f"beta:{sp}:{pred}:t{t + 1}", betas[:, j, k])
        put(f"guilds:t{t + 1}", [d.trees[t].n_guilds for d in draws])
    if draws[0].phi is not None:
        put("phi", [d.phi for d in draws])
        put("sigma2", [d.sigma2 for d in draws])
    return out


def write_summary_tables(
    out_dir, draws, species, predictors, out_prefix: str = "summary"
) -> None:
    """Posterior structure and coefficient tables, one CSV per view."""
    out = Path(out_dir)
    species = tuple(species)
    predictors = tuple(predictors)
    n_periods = draws[0].n_periods
    alphas = np.asarray([d.alpha for d in draws])
    ddof = 1 if len(draws) > 1 else 0

    with open(out / f"{out_prefix}_guild_counts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "n_guilds", "probability"])
        for t in range(n_periods):
            pmf = guild_count_distribution(draws, t)
            for g, p in enumerate(pmf, start=1):
                w.writerow([t + 1, g, _fmt(p)])

    with open(out / f"{out_prefix}_cooccurrence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "species_a", "species_b", "probability"])
        for t in range(n_periods):
            mat = cooccurrence_matrix(draws, t)
            for a, sa in enumerate(species):
                for b, sb in enumerate(species):
                    if b <= a:
                        continue
                    w.writerow([t + 1, sa, sb, _fmt(mat[a, b])])

    def quants(x, axis=0):
        return np.quantile(x, (0.025, 0.5, 0.975), axis=axis)

    with open(out / f"{out_prefix}_coefficients.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["kind", "period", "species", "predictor",
             "mean", "sd", "q2.5", "q50", "q97.5"]
        )
        qa = quants(alphas)
        for j, sp in enumerate(species):
            w.writerow(
                ["intercept", "", sp, "",
                 _fmt(alphas[:, j].mean()), _fmt(alphas[:, j].std(ddof=ddof)),
                 _fmt(qa[0, j]), _fmt(qa[1, j]), _fmt(qa[2, j])]
            )
        for t in range(n_periods):
            betas = np.asarray(
                [d.gammas[t][d.trees[t].guild_of, :] for d in draws]
            )
            qb = quants(betas)
            for j, sp in enumerate(species):
                for k, pred in enumerate(predictors):
                    col = betas[:, j, k]
                    w.writerow(
                        ["slope", t + 1, sp, pred,
                         _fmt(col.mean()), _fmt(col.std(ddof=ddof)),
                         _fmt(qb[0, j, k]), _fmt(qb[1, j, k]), _fmt(qb[2, j, k])]
                    )
        for name, values in (
            ("phi", [d.phi for d in draws]),
            ("sigma2", [d.sigma2 for d in draws]),
        ):
            if values[0] is None:
                continue
            col = np.asarray(values, dtype=float)
            qv = quants(col)
            w.writerow(
                [name, "", "", "",
                 _fmt(col.mean()), _fmt(col.std(ddof=ddof)),
                 _fmt(qv[0]), _fmt(qv[1]), _fmt(qv[2])]
            )

    with open(out / f"{out_prefix}_modes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "partition", "frequency", "n_matching"])
        for t in range(n_periods):
            mode = mode_tree(draws, species, t)
            w.writerow([t + 1, mode.encoding, _fmt(mode.frequency), mode.n_matching])

    with open(out / "partitions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "partition_id", "partition", "count"])
        for t in range(n_periods):
            counts = Counter(
                encode_partition(d.trees[t].canonical_key(), species) for d in draws
            )
            ids: dict[str, int] = {}
            for d in draws:
                enc = encode_partition(d.trees[t].canonical_key(), species)
                ids.setdefault(enc, len(ids) + 1)
            for enc, pid in ids.items():
                w.writerow([t + 1, pid, enc, counts[enc]])


def compute_scores(draws, data: CommunityData, family: str, predictive: dict) -> dict:
    scores: dict = {
        "waic": waic(
            draws, data, family,
            n_z=predictive["n_z"], z_seed=predictive["z_seed"],
        )
        if len(draws) >= 2
        else None,
    }
    if data.holdout_mask is not None and data.holdout_mask.any():
        scores["holdout"] = lppd_holdout(
            draws, data, family,
            n_z=predictive["n_z"], z_seed=predictive["z_seed"],
        )
    else:
        scores["holdout"] = None
    return scores


def run_fit(config: ChainConfig, resume: bool = False, log=None) -> dict:
    """Execute one fit into ``config.output_dir``; returns the manifest."""
    log = log or (lambda msg: None)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    draws_path = out / DRAWS_FILE

    data, record = load_data(config)
    fit_data = data.fit_subset()
    checksum = data_checksum(data)
    n_periods = fit_data.n_periods
    learner = learner_from_config(config, n_periods)
    priors = priors_from_config(config)

    manifest = {
        "status": "running",
        "config": config.to_dict(),
        "data_checksum": checksum,
        "standardization": {
            "applied": record.applied,
            "center": list(record.center),
            "scale": list(record.scale),
        },
        "n_species": data.n_species,
        "n_predictors": data.n_predictors,
        "n_periods": n_periods,
        "n_sites_fit": fit_data.n_sites,
        "n_sites_holdout": int(data.holdout_mask.sum())
        if data.holdout_mask is not None
        else 0,
        "started": _now(),
    }

    if resume:
        if not draws_path.exists():
            raise ValueError(f"{out}: nothing to resume, no {DRAWS_FILE}")
        if not has_checkpoint(out):
            raise ValueError(f"{out}: nothing to resume, no checkpoint")
        previous = read_manifest(out)
        if previous.get("data_checksum") != checksum:
            raise ValueError(
                f"{out}: data checksum changed since the original run; refusing to resume"
            )
        state, rng, start_iteration, retained = load_checkpoint(out, fit_data)
        truncate_draws(draws_path, retained)
        writer = DrawWriter(
            draws_path, data.species_names, n_periods, config.family, append=True
        )
        if writer.rows_written != retained:
            raise RuntimeError(
                f"{out}: draws table has {writer.rows_written} rows, checkpoint "
                f"says {retained}"
            )
        log(f"resuming at sweep {start_iteration} with {retained} draws kept")
    else:
        rng = np.random.default_rng(config.seed)
        state = (
            init_zip_state(fit_data)
            if config.family == "zip"
            else init_probit_state(fit_data)
        )
        start_iteration = 0
        writer = DrawWriter(
            draws_path, data.species_names, n_periods, config.family
        )

    write_manifest(out, manifest)

    def on_draw(draw):
        writer.write(draw)
        if config.checkpoint_every and (
            writer.rows_written % config.checkpoint_every == 0
        ):
            save_checkpoint(
                out,
                config.family,
                state,
                rng,
                iteration=draw.draw_index * config.thin,
                retained=writer.rows_written,
                species=data.species_names,
            )

    run = run_chain_zip if config.family == "zip" else run_chain_probit
    sweep_notes: list[str] = []
    started = time.monotonic()
    try:
        run(
            fit_data,
            iterations=config.iterations,
            thin=config.thin,
            burn=config.burn,
            priors=priors,
            learner=learner,
            rng=rng,
            state=state,
            start_iteration=start_iteration,
            on_draw=on_draw,
            warn_sink=sweep_notes,
        )
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = str(exc)
        manifest["finished"] = _now()
        write_manifest(out, manifest)
        raise
    finally:
        writer.close()
    wall = time.monotonic() - started

    draws = read_draws(draws_path, data.species_names, config.family)
    log(f"{len(draws)} draws retained, computing summaries")
    write_summary_tables(out, draws, data.species_names, data.predictor_names)
    scores = compute_scores(draws, data, config.family, config.predictive)
    with open(out / "scores.json", "w") as fh:
        json.dump(scores, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest.update(
        status="complete",
        finished=_now(),
        wall_time_seconds=wall,
        n_retained=len(draws),
        scores=scores,
        diagnostics=_diagnostics(draws, data),
        warnings=sweep_notes[:_MAX_MANIFEST_WARNINGS],
        n_warnings=len(sweep_notes),
    )
    write_manifest(out, manifest)
    return manifest


def run_simulate(config: SimulateConfig, out_dir=".") -> tuple[Path, Path]:
    """Draw one synthetic community and write it plus a truth sidecar."""
    from guildtree.ingest import write_community_csv

    spec = SimSpec(
        n_sites=config.n_sites,
        n_species=config.n_species,
        n_predictors=config.n_predictors,
        family=config.family,
        groups=config.groups,
        alpha=config.alpha,
        gammas=config.gammas,
        phi=config.phi,
        sigma2=config.sigma2,
        holdout_fraction=config.holdout_fraction,
    )
    sim = simulate(spec, seed=config.seed)
    out = Path(out_dir)
    data_path = out / config.output
    truth_path = out / config.truth
    write_community_csv(data_path, sim.data)
    species = sim.data.species_names
    truth = {
        "family": config.family,
        "seed": config.seed,
        "n_sites": config.n_sites,
        "species": list(species),
        "predictors": list(sim.data.predictor_names),
        "partitions": [
            encode_partition(period, species) for period in spec.groups
        ],
        "alpha": list(config.alpha),
        "gammas": [g.tolist() for g in config.gammas],
        "phi": config.phi,
        "sigma2": config.sigma2,
    }
    with open(truth_path, "w") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    return data_path, truth_path
