"""Posterior summaries and predictive scoring for guild-structured MSDMs.

Draws carry a guild tree per period, so guild structure is summarized as a
distribution: how many guilds, which species pairs share one, and which
partition occurs most often.  Coefficient summaries average species-level
effects over that distribution.  Predictive fit is scored by WAIC in sample
and by the log pointwise predictive density on held-out sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from guildtree.core import (
    CommunityData,
    PosteriorDraw,
    canonical_groups,
    encode_partition,
)
from guildtree.probit import presence_loglik

__all__ = [
    "TraceStats",
    "ModeSummary",
    "PosteriorSummary",
    "draw_mean",
    "guild_count_distribution",
    "cooccurrence_matrix",
    "mode_tree",
    "coefficient_posteriors",
    "waic",
    "lppd_holdout",
    "summarize_draws",
    "trace_stats",
    "mcse_batch_means",
]


def draw_mean(draw: PosteriorDraw, data: CommunityData) -> np.ndarray:
    """Latent mean matrix mu[i, j] implied by one posterior draw."""
    mu = np.broadcast_to(draw.alpha, data.responses.shape).copy()
    for t, sites in enumerate(data.period_sites()):
        contrib = data.predictors[sites] @ draw.gammas[t].T
        mu[sites] += contrib[:, draw.trees[t].guild_of]
    return mu


# ---------------------------------------------------------------------------
# Guild structure summaries
# ---------------------------------------------------------------------------

def guild_count_distribution(
    draws: list[PosteriorDraw], period: int = 0
) -> np.ndarray:
    """Posterior pmf of the guild count; entry g-1 is P(G = g)."""
    if not draws:
        raise ValueError("no draws")
    j = draws[0].trees[period].n_species
    pmf = np.zeros(j)
    for draw in draws:
        pmf[draw.trees[period].n_guilds - 1] += 1
    return pmf / len(draws)


def cooccurrence_matrix(draws: list[PosteriorDraw], period: int = 0) -> np.ndarray:
    """Posterior probability that each species pair shares a guild."""
    if not draws:
        raise ValueError("no draws")
    j = draws[0].trees[period].n_species
    out = np.zeros((j, j))
    for draw in draws:
        guild = draw.trees[period].guild_of
        out += guild[:, None] == guild[None, :]
    return out / len(draws)


@dataclass(frozen=True)
class ModeSummary:
    """Most frequent guild partition and coefficients conditional on it.

    ``gamma_mean``/``gamma_sd`` rows follow ``groups`` order (groups sorted
    by smallest member), averaging only the draws whose partition matches.
    """

    encoding: str
    groups: tuple[tuple[int, ...], ...]
    frequency: float
    n_matching: int
    gamma_mean: np.ndarray
    gamma_sd: np.ndarray


def mode_tree(
    draws: list[PosteriorDraw], species_names, period: int = 0
) -> ModeSummary:
    """Modal partition for one period, with mode-conditional coefficients.

    The mode is the most frequent partition; ties go to the partition seen
    first in the chain.  Guild order inside the summary is canonical, so
    it does not depend on the topology of the trees that produced it.
    """
    if not draws:
        raise ValueError("no draws")
    counts: dict[tuple, int] = {}
    first_seen: dict[tuple, int] = {}
    for pos, draw in enumerate(draws):
        key = draw.trees[period].canonical_key()
        counts[key] = counts.get(key, 0) + 1
        first_seen.setdefault(key, pos)
    mode_key = min(counts, key=lambda k: (-counts[k], first_seen[k]))

    matching = []
    for draw in draws:
        tree = draw.trees[period]
        if tree.canonical_key() != mode_key:
            continue
        # Reorder gamma rows from the tree's left-to-right guild order to
        # the canonical group order of the mode partition.
        order = [tree.groups.index(block) for block in mode_key]
        matching.append(draw.gammas[period][order, :])
    stacked = np.asarray(matching)
    return ModeSummary(
        encoding=encode_partition(mode_key, species_names),
        groups=mode_key,
        frequency=counts[mode_key] / len(draws),
        n_matching=len(matching),
        gamma_mean=stacked.mean(axis=0),
        gamma_sd=stacked.std(axis=0, ddof=1) if len(matching) > 1
        else np.zeros_like(stacked[0]),
    )


def coefficient_posteriors(
    draws: list[PosteriorDraw], period: int = 0
) -> dict[str, np.ndarray]:
    """Species-level coefficient summaries, mixing over guild structures.

    Each draw assigns species j the coefficient row of its guild; the
    summaries average those rows across draws, so they integrate over tree
    uncertainty rather than conditioning on one partition.  Quantiles are
    2.5 / 50 / 97.5 percent.
    """
    if not draws:
        raise ValueError("no draws")
    betas = np.asarray(
        [d.gammas[period][d.trees[period].guild_of, :] for d in draws]
    )  # (M, J, K)
    alphas = np.asarray([d.alpha for d in draws])
    ddof = 1 if len(draws) > 1 else 0
    q = np.quantile(betas, (0.025, 0.5, 0.975), axis=0)
    return {
        "alpha_mean": alphas.mean(axis=0),
        "alpha_sd": alphas.std(axis=0, ddof=ddof),
        "beta_mean": betas.mean(axis=0),
        "beta_sd": betas.std(axis=0, ddof=ddof),
        "beta_q025": q[0],
        "beta_q50": q[1],
        "beta_q975": q[2],
    }


# ---------------------------------------------------------------------------
# Predictive scoring
# ---------------------------------------------------------------------------

class _CellAccumulator:
    """Streaming per-cell log mean p and sample variance of log p."""

    def __init__(self, shape: tuple[int, ...]):
        self.count = 0
        self.run_max = np.full(shape, -np.inf)
        self.run_sum = np.zeros(shape)
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, logp: np.ndarray) -> None:
        self.count += 1
        new_max = np.maximum(self.run_max, logp)
        with np.errstate(invalid="ignore"):
            shift = np.where(np.isfinite(self.run_max), self.run_max - new_max, 0.0)
        self.run_sum = self.run_sum * np.exp(shift) + np.exp(logp - new_max)
        self.run_max = new_max
        delta = logp - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (logp - self.mean)

    def log_mean_p(self) -> np.ndarray:
        return self.run_max + np.log(self.run_sum) - np.log(self.count)

    def var_log_p(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)


def _zip_cell_logp(
    mu: np.ndarray,
    sigma2: float,
    phi: float,
    y: np.ndarray,
    rng: np.random.Generator,
    n_z: int,
) -> np.ndarray:
    """Monte Carlo log predictive density per cell for one ZIP draw.

    The latent score has no closed-form marginal, so each cell integrates
    over ``n_z`` fresh score draws; the structural-zero mass is added in
    closed form at observed zeros.
    """
    z = mu[None, :, :] + np.sqrt(sigma2) * rng.standard_normal((n_z,) + mu.shape)
    with np.errstate(over="ignore"):
        log_pois = y[None, :, :] * z - np.exp(z) - gammaln(y + 1.0)[None, :, :]
    log_mean_pois = logsumexp(log_pois, axis=0) - np.log(n_z)
    with np.errstate(divide="ignore"):
        log_obs = np.log1p(-phi) + log_mean_pois if phi < 1.0 else np.full_like(mu, -np.inf)
        out = np.where(y == 0, np.logaddexp(np.log(phi) if phi > 0 else -np.inf, log_obs), log_obs)
    return out


def _family_of(draws: list[PosteriorDraw]) -> str:
    return "probit" if draws[0].phi is None else "zip"


def _pointwise_logp(
    draws: list[PosteriorDraw],
    data: CommunityData,
    family: str,
    n_z: int,
    z_seed: int,
) -> _CellAccumulator:
    acc = _CellAccumulator(data.responses.shape)
    y = data.responses
    rng = np.random.default_rng(z_seed)
    for draw in draws:
        mu = draw_mean(draw, data)
        if family == "probit":
            logp = presence_loglik(mu, y)
        elif family == "zip":
            logp = _zip_cell_logp(mu, draw.sigma2, draw.phi, y, rng, n_z)
        else:
            raise ValueError(f"unknown family {family!r}")
        acc.add(logp)
    return acc


def waic(
    draws: list[PosteriorDraw],
    data: CommunityData,
    family: str | None = None,
    n_z: int = 32,
    z_seed: int = 0,
) -> dict[str, float]:
    """Widely applicable information criterion on the fitting sites.

    lppd sums log mean predictive density per cell; the effective parameter
    count sums the per-cell sample variance (ddof 1) of the log density;
    waic = -2 (lppd - p_eff).  ZIP cells are integrated by Monte Carlo with
    ``n_z`` score draws per retained draw, seeded for reproducibility.
    At least two draws are required or the variance is undefined.
    """
    if len(draws) < 2:
        raise ValueError("waic needs at least 2 draws")
    family = family or _family_of(draws)
    fit_data = data.fit_subset()
    acc = _pointwise_logp(draws, fit_data, family, n_z, z_seed)
    lppd = float(acc.log_mean_p().sum())
    p_eff = float(acc.var_log_p().sum())
    return {"waic": -2.0 * (lppd - p_eff), "lppd": lppd, "p_eff": p_eff}


def lppd_holdout(
    draws: list[PosteriorDraw],
    data: CommunityData,
    family: str | None = None,
    n_z: int = 32,
    z_seed: int = 0,
) -> dict[str, float]:
    """Predictive score on held-out sites: deviance scale, lower is better."""
    if not draws:
        raise ValueError("no draws")
    family = family or _family_of(draws)
    held = data.holdout_subset()
    acc = _pointwise_logp(draws, held, family, n_z, z_seed)
    lppd = float(acc.log_mean_p().sum())
    return {"lppd": lppd, "score": -2.0 * lppd}


# ---------------------------------------------------------------------------
# Chain-level bundles and diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSummary:
    """Bundle of structure and coefficient summaries for one fitted chain."""

    n_draws: int
    n_periods: int
    alpha_mean: np.ndarray
    alpha_sd: np.ndarray
    beta_mean: tuple[np.ndarray, ...]
    beta_sd: tuple[np.ndarray, ...]
    beta_q025: tuple[np.ndarray, ...]
    beta_q50: tuple[np.ndarray, ...]
    beta_q975: tuple[np.ndarray, ...]
    guild_count_pmf: tuple[np.ndarray, ...]
    cooccurrence: tuple[np.ndarray, ...]
    modes: tuple[ModeSummary, ...]
    phi_mean: float | None = None
    phi_sd: float | None = None
    sigma2_mean: float | None = None
    sigma2_sd: float | None = None


def summarize_draws(
    draws: list[PosteriorDraw], species_names
) -> PosteriorSummary:
    """Structure and coefficient summaries across every period."""
    if not draws:
        raise ValueError("no draws")
    n_periods = draws[0].n_periods
    per_period = [coefficient_posteriors(draws, t) for t in range(n_periods)]
    alphas = per_period[0]
    phis = [d.phi for d in draws if d.phi is not None]
    sig2s = [d.sigma2 for d in draws if d.sigma2 is not None]
    ddof = 1 if len(draws) > 1 else 0
    return PosteriorSummary(
        n_draws=len(draws),
        n_periods=n_periods,
        alpha_mean=alphas["alpha_mean"],
        alpha_sd=alphas["alpha_sd"],
        beta_mean=tuple(p["beta_mean"] for p in per_period),
        beta_sd=tuple(p["beta_sd"] for p in per_period),
        beta_q025=tuple(p["beta_q025"] for p in per_period),
        beta_q50=tuple(p["beta_q50"] for p in per_period),
        beta_q975=tuple(p["beta_q975"] for p in per_period),
        guild_count_pmf=tuple(
            guild_count_distribution(draws, t) for t in range(n_periods)
        ),
        cooccurrence=tuple(cooccurrence_matrix(draws, t) for t in range(n_periods)),
        modes=tuple(mode_tree(draws, species_names, t) for t in range(n_periods)),
        phi_mean=float(np.mean(phis)) if phis else None,
        phi_sd=float(np.std(phis, ddof=ddof)) if phis else None,
        sigma2_mean=float(np.mean(sig2s)) if sig2s else None,
        sigma2_sd=float(np.std(sig2s, ddof=ddof)) if sig2s else None,
    )


@dataclass(frozen=True)
class TraceStats:
    """Mean, sample sd, and lag-1 autocorrelation of a scalar trace."""

    mean: float
    sd: float
    lag1: float


def trace_stats(series: np.ndarray) -> TraceStats:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("trace must be a 1-D series with at least 2 points")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return TraceStats(mean, 0.0, 0.0)
    a = x[:-1] - mean
    b = x[1:] - mean
    lag1 = float((a * b).sum() / ((x - mean) ** 2).sum())
    return TraceStats(mean, sd, lag1)


def mcse_batch_means(series: np.ndarray, n_batches: int = 20) -> float:
    """Monte Carlo standard error of the mean by nonoverlapping batch means."""
    x = np.asarray(series, dtype=float)
    if x.size < 2 * n_batches:
        raise ValueError(f"need at least {2 * n_batches} points")
    size = x.size // n_batches
    batches = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))
