"""Exact Bayesian model averaging over guild partitions for small communities.

For a handful of species every set partition can be enumerated, its prior
weight under the tree-generating process computed in closed form, and its
marginal likelihood estimated for the probit family.  The resulting model
average is an independent reference for the tree-embedded sampler: guild
and coefficient summaries computed from it should match the MCMC output
within tolerance when the learner's test level is calibrated.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from guildtree.core import (
    CommunityData,
    GuildPartition,
    canonical_groups,
)
from guildtree.learner import TreePriorConfig
from guildtree.probit import ProbitPriors, presence_loglik, sample_truncated_normal

__all__ = [
    "PartitionEnumeration",
    "FixedStructureResult",
    "ModelAverage",
    "enumerate_partitions",
    "partition_prior_weight",
    "fixed_structure_reference",
    "chib_log_marginal",
    "exact_model_average_probit",
    "guild_count_pmf",
    "pairwise_cooccurrence",
]

ENUMERATION_CAP = 6

Groups = tuple[tuple[int, ...], ...]


def _set_partitions(n: int) -> list[Groups]:
    out: list[Groups] = []

    def rec(j: int, blocks: list[list[int]]) -> None:
        if j == n:
            out.append(canonical_groups(blocks))
            return
        for b in blocks:
            b.append(j)
            rec(j + 1, blocks)
            b.pop()
        blocks.append([j])
        rec(j + 1, blocks)
        blocks.pop()

    rec(0, [])
    return sorted(out)


def partition_prior_weight(groups, prior: TreePriorConfig) -> float:
    """Probability that the tree-generating process induces ``groups``.

    A node either stays terminal (probability 1 - p_split) or splits, in
    which case each of its 2^m - 2 valid left/right species assignments is
    equally likely and the children recurse independently.  The partition
    is induced exactly when every split keeps each block whole, so the
    weight sums process probability over all block-bipartition sequences;
    recursing over blocks makes every set partition reachable (peel one
    block per split) unless max_depth cuts the recursion short.  Weights
    over all partitions of a fixed species set sum to one.
    """
    groups = canonical_groups(groups)

    @lru_cache(maxsize=None)
    def weight(blocks: Groups, depth: int) -> float:
        members = sorted(s for b in blocks for s in b)
        m = len(members)
        if m == 1:
            return 1.0
        if depth >= prior.max_depth:
            return 1.0 if len(blocks) == 1 else 0.0
        if len(blocks) == 1:
            return 1.0 - prior.p_split
        per_assignment = 2.0 / (2.0**m - 2.0)
        total = 0.0
        rest = blocks[1:]
        n_rest = len(rest)
        for mask in range(2**n_rest):
            side_a = [blocks[0]]
            side_b = []
            for i in range(n_rest):
                (side_a if (mask >> i) & 1 else side_b).append(rest[i])
            if not side_b:
                continue
            total += (
                per_assignment
                * weight(canonical_groups(side_a), depth + 1)
                * weight(canonical_groups(side_b), depth + 1)
            )
        return prior.p_split * total

    return weight(groups, 0)


@dataclass(frozen=True)
class PartitionEnumeration:
    """All guild partitions of a small community with tree-process priors."""

    n_species: int
    groups: tuple[Groups, ...]
    prior_weights: np.ndarray
    tree_prior: TreePriorConfig

    def __post_init__(self):
        w = np.asarray(self.prior_weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "prior_weights", w)
        if len(self.groups) != w.size:
            raise ValueError("one weight per partition required")


def enumerate_partitions(
    n_species: int,
    tree_prior: TreePriorConfig | None = None,
    cap: int = ENUMERATION_CAP,
) -> PartitionEnumeration:
    """Every set partition of {0..J-1} with its tree-process prior weight.

    The count is the Bell number, which outgrows exact treatment quickly,
    so communities larger than ``cap`` species are refused.  Partitions the
    process cannot reach (only possible under a tight max_depth) keep
    weight zero; the weights always sum to one.
    """
    if n_species < 1:
        raise ValueError("n_species must be >= 1")
    if n_species > cap:
        raise ValueError(
            f"exact enumeration covers at most {cap} species; got {n_species}. "
            "Use the tree-embedded sampler for larger communities."
        )
    tree_prior = tree_prior or TreePriorConfig()
    groups = _set_partitions(n_species)
    weights = np.array([partition_prior_weight(g, tree_prior) for g in groups])
    if not np.isclose(weights.sum(), 1.0, atol=1e-9):
        raise AssertionError(
            f"partition prior weights sum to {weights.sum()!r}, not 1"
        )
    return PartitionEnumeration(
        n_species=n_species,
        groups=tuple(groups),
        prior_weights=weights,
        tree_prior=tree_prior,
    )


# ---------------------------------------------------------------------------
# Fixed-structure conjugate reference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedStructureResult:
    """Posterior for the probit model with the guild partition held fixed.

    ``log_marginal`` is the Chib-style marginal-likelihood estimate formed
    from the same run; ``alpha_mean``/``gamma_mean`` are Rao-Blackwellized
    posterior means (averages of the per-sweep conditional means).
    """

    groups: Groups
    alpha_draws: np.ndarray  # (M, J)
    gamma_draws: np.ndarray  # (M, G, K)
    alpha_mean: np.ndarray
    gamma_mean: np.ndarray
    log_marginal: float

    def species_beta_mean(self) -> np.ndarray:
        """(J, K) posterior-mean coefficients per species."""
        j = self.alpha_mean.size
        guild_of = np.empty(j, dtype=int)
        for g, block in enumerate(self.groups):
            guild_of[list(block)] = g
        return self.gamma_mean[guild_of, :]


def fixed_structure_reference(
    data: CommunityData,
    groups,
    priors: ProbitPriors | None = None,
    iterations: int = 3000,
    burn: int = 500,
    seed: int = 0,
) -> FixedStructureResult:
    """Conjugate probit Gibbs run with the guild partition held constant.

    The intercepts and guild coefficients are drawn as one Gaussian block
    given the latent scores; because that block's covariance is constant,
    the run doubles as a Chib-style marginal-likelihood estimator: the
    posterior ordinate at the Rao-Blackwellized mean is the average of the
    per-sweep conditional densities, and the likelihood ordinate
    integrates the latent scores analytically.
    """
    if data.n_periods != 1:
        raise ValueError("the fixed-structure reference supports a single period")
    data.validate_for("probit")
    if iterations <= burn:
        raise ValueError("iterations must exceed burn")
    priors = priors or ProbitPriors()
    groups = canonical_groups(groups)
    y = data.responses
    x = data.predictors
    n, j = y.shape
    k = x.shape[1]
    g = len(groups)

    z = GuildPartition.from_groups(groups, j).z
    # Row (i, j) of the stacked design: species indicator then x_i kron z_j,
    # which flattens gamma predictor-major (guild index fastest).
    design = np.hstack([np.tile(np.eye(j), (n, 1)), np.kron(x, z)])
    dim = design.shape[1]
    prior_var = np.concatenate(
        [np.full(j, priors.alpha_var), np.full(dim - j, priors.gamma_var)]
    )
    prec = design.T @ design + np.diag(1.0 / prior_var)
    chol = np.linalg.cholesky(prec)
    y_pos = y.ravel() == 1

    rng = np.random.default_rng(seed)
    theta = np.zeros(dim)
    cond_means = []
    thetas = []
    for it in range(iterations):
        aux = sample_truncated_normal(design @ theta, 1.0, y_pos, rng)
        mean = np.linalg.solve(prec, design.T @ aux)
        theta = mean + np.linalg.solve(chol.T, rng.standard_normal(dim))
        if it >= burn:
            cond_means.append(mean)
            thetas.append(theta)
    means = np.asarray(cond_means)  # (M, dim)
    thetas = np.asarray(thetas)
    theta_star = means.mean(axis=0)

    loglik = float(presence_loglik(design @ theta_star, y.ravel()).sum())
    logprior = float(
        -0.5 * np.sum(theta_star**2 / prior_var)
        - 0.5 * np.sum(np.log(2.0 * np.pi * prior_var))
    )
    # Posterior ordinate: all conditionals share covariance prec^-1.
    diff = theta_star - means  # (M, dim)
    half = diff @ chol
    quad = np.einsum("md,md->m", half, half)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    log_ord = float(
        logsumexp(-0.5 * quad) - np.log(len(means))
        + 0.5 * logdet - 0.5 * dim * np.log(2.0 * np.pi)
    )

    # Gamma columns are flattened predictor-major: reshape (K, G) then swap.
    gamma_draws = thetas[:, j:].reshape(-1, k, g).transpose(0, 2, 1)
    return FixedStructureResult(
        groups=groups,
        alpha_draws=thetas[:, :j],
        gamma_draws=gamma_draws,
        alpha_mean=theta_star[:j],
        gamma_mean=theta_star[j:].reshape(k, g).T,
        log_marginal=loglik + logprior - log_ord,
    )


def chib_log_marginal(
    data: CommunityData,
    groups,
    priors: ProbitPriors | None = None,
    iterations: int = 3000,
    burn: int = 500,
    seed: int = 0,
) -> float:
    """Marginal likelihood of the probit model with a fixed guild partition."""
    return fixed_structure_reference(
        data, groups, priors, iterations=iterations, burn=burn, seed=seed
    ).log_marginal


# ---------------------------------------------------------------------------
# Model averaging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelAverage:
    """Enumeration-based posterior over guild partitions.

    ``conditional_beta_means[p]`` holds the (J, K) species coefficient
    means under partition p; the model-averaged ``species_beta_mean`` is
    their posterior-probability mixture.
    """

    enumeration: PartitionEnumeration
    log_marginals: np.ndarray
    posterior_probs: np.ndarray
    alpha_mean: np.ndarray
    species_beta_mean: np.ndarray
    conditional_beta_means: np.ndarray  # (P, J, K)
    warnings: tuple[str, ...] = ()

    @property
    def groups(self) -> tuple[Groups, ...]:
        return self.enumeration.groups


def exact_model_average_probit(
    data: CommunityData,
    enumeration: PartitionEnumeration | None = None,
    priors: ProbitPriors | None = None,
    iterations: int = 3000,
    burn: int = 500,
    seed: int = 0,
    cap: int = ENUMERATION_CAP,
) -> ModelAverage:
    """Posterior over every guild partition of a small community.

    Each partition's posterior mass combines its tree-process prior weight
    with a marginal-likelihood estimate from a fixed-structure run; the
    species-level coefficient means mix the per-partition conditional
    means by those posterior probabilities.  Partitions whose estimate
    comes back non-finite are dropped from the average with a warning.
    """
    if enumeration is None:
        enumeration = enumerate_partitions(data.n_species, cap=cap)
    if enumeration.n_species != data.n_species:
        raise ValueError("enumeration does not match the data's species count")
    prior_w = enumeration.prior_weights
    n_models = len(enumeration.groups)
    log_ml = np.empty(n_models)
    cond_alpha = np.empty((n_models, data.n_species))
    cond_beta = np.empty((n_models, data.n_species, data.n_predictors))
    for idx, groups in enumerate(enumeration.groups):
        ref = fixed_structure_reference(
            data, groups, priors, iterations=iterations, burn=burn,
            seed=seed + idx,
        )
        log_ml[idx] = ref.log_marginal
        cond_alpha[idx] = ref.alpha_mean
        cond_beta[idx] = ref.species_beta_mean()

    with np.errstate(divide="ignore"):
        log_unnorm = np.log(prior_w) + log_ml
    notes: list[str] = []
    bad = ~np.isfinite(log_unnorm) & (prior_w > 0)
    for idx in np.flatnonzero(bad):
        msg = (
            f"marginal likelihood for partition {enumeration.groups[idx]} is "
            f"non-finite; dropped from the model average"
        )
        notes.append(msg)
        _warnings.warn(msg)
        log_unnorm[idx] = -np.inf
    if not np.isfinite(log_unnorm).any():
        raise ValueError("no partition produced a finite marginal likelihood")
    probs = np.exp(log_unnorm - logsumexp(log_unnorm))
    return ModelAverage(
        enumeration=enumeration,
        log_marginals=log_ml,
        posterior_probs=probs,
        alpha_mean=probs @ cond_alpha,
        species_beta_mean=np.einsum("p,pjk->jk", probs, cond_beta),
        conditional_beta_means=cond_beta,
        warnings=tuple(notes),
    )


def guild_count_pmf(average: ModelAverage) -> np.ndarray:
    """P(G = g) for g = 1..J under the enumeration posterior."""
    pmf = np.zeros(average.enumeration.n_species)
    for groups, p in zip(average.groups, average.posterior_probs):
        pmf[len(groups) - 1] += p
    return pmf


def pairwise_cooccurrence(average: ModelAverage) -> np.ndarray:
    """P(species a and b share a guild) under the enumeration posterior."""
    j = average.enumeration.n_species
    out = np.zeros((j, j))
    for groups, p in zip(average.groups, average.posterior_probs):
        for block in groups:
            for a in block:
                for b in block:
                    out[a, b] += p
    return out
