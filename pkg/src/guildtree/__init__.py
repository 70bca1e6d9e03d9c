"""Bayesian multi-species distribution models with tree-structured guild
shrinkage.

Species are partitioned into guilds by a binary tree learned inside the
sampler; species within a guild share regression coefficients.  Supports
presence-absence (probit) and zero-inflated Poisson responses.
"""

__version__ = "0.1.0"

from guildtree.core import (
    CommunityData,
    Coefficients,
    GuildPartition,
    GuildTree,
    PosteriorDraw,
    SpeciesCoefficients,
    TreeNode,
    count_guild_compositions,
    encode_partition,
    expand_guild_design,
    model_dimension,
    n_regression_coefficients,
    parse_partition,
    partition_from_tree,
    species_coefficients,
)
from guildtree.inference import (
    lppd_holdout,
    mode_tree,
    summarize_draws,
    waic,
)
from guildtree.learner import (
    LearnerConfig,
    TreePriorConfig,
    fit_tree,
    sample_tree_prior,
)
from guildtree.probit import ProbitPriors, run_chain_probit
from guildtree.simulate import SimSpec, simulate
from guildtree.zip_poisson import ZipPriors, run_chain_zip

__all__ = [
    "CommunityData",
    "Coefficients",
    "GuildPartition",
    "GuildTree",
    "LearnerConfig",
    "PosteriorDraw",
    "ProbitPriors",
    "SimSpec",
    "SpeciesCoefficients",
    "TreeNode",
    "TreePriorConfig",
    "ZipPriors",
    "count_guild_compositions",
    "encode_partition",
    "expand_guild_design",
    "fit_tree",
    "lppd_holdout",
    "mode_tree",
    "model_dimension",
    "n_regression_coefficients",
    "parse_partition",
    "partition_from_tree",
    "run_chain_probit",
    "run_chain_zip",
    "sample_tree_prior",
    "simulate",
    "species_coefficients",
    "summarize_draws",
    "waic",
    "__version__",
]
