"""Conditional updates shared by the presence-absence and abundance samplers.

Both families reduce, given their latent scores, to the same Gaussian
regression sweep: re-learn the guild tree per period from score residuals,
then draw guild coefficients from conjugate normal conditionals.
"""

from __future__ import annotations

import numpy as np

from guildtree.core import CommunityData, GuildTree, tree_from_groups
from guildtree.learner import LearnerConfig, PseudoData, fit_tree

__all__ = [
    "draw_from_precision",
    "update_gamma_period",
    "resolve_learner",
    "update_trees",
]


def draw_from_precision(
    prec: np.ndarray, lin: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One draw from N(prec^-1 lin, prec^-1) via the Cholesky factor."""
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, lin)
    noise = np.linalg.solve(chol.T, rng.standard_normal(lin.shape[0]))
    return mean + noise


def update_gamma_period(
    x: np.ndarray,
    resid: np.ndarray,
    tree: GuildTree,
    gamma_var: float,
    rng: np.random.Generator,
    noise_var: float = 1.0,
) -> np.ndarray:
    """Conjugate draw of the (G, K) coefficient block for one period.

    Guild blocks are conditionally independent given the intercepts, and
    every member species shares the same site design, so the guild
    precision is m_g X'X / noise_var + I / gamma_var.  A period with no
    sites contributes no likelihood and falls back to the prior.
    """
    k = x.shape[1]
    gamma = np.empty((tree.n_guilds, k))
    if x.shape[0] == 0:
        return np.sqrt(gamma_var) * rng.standard_normal(gamma.shape)
    eye = np.eye(k)
    xtx = x.T @ x
    xtr = x.T @ resid  # (K, J)
    for g, members in enumerate(tree.groups):
        m = len(members)
        prec = (m / noise_var) * xtx + eye / gamma_var
        lin = xtr[:, list(members)].sum(axis=1) / noise_var
        gamma[g] = draw_from_precision(prec, lin, rng)
    return gamma


def resolve_learner(learner, t: int) -> LearnerConfig:
    """Resolve a shared or per-period learner configuration."""
    if isinstance(learner, LearnerConfig):
        return learner
    return learner[t]


def update_trees(
    state,
    data: CommunityData,
    resid_alpha: np.ndarray,
    period_sites: list[np.ndarray],
    learner,
    fixed_partitions,
) -> list[str]:
    """Re-learn the guild tree for every period, updating ``state.trees``.

    Returns warning messages; a period with no sites keeps its tree from
    the previous sweep.  ``fixed_partitions`` bypasses the learner with a
    constant guild structure per period.
    """
    notes: list[str] = []
    if fixed_partitions is not None:
        state.trees = [
            tree_from_groups(groups, data.n_species) for groups in fixed_partitions
        ]
        return notes
    trees = []
    for t, sites in enumerate(period_sites):
        if sites.size == 0:
            notes.append(f"period {t + 1} has no sites; previous tree retained")
            trees.append(state.trees[t])
            continue
        fit = fit_tree(
            PseudoData(data.predictors[sites], resid_alpha[sites]),
            resolve_learner(learner, t),
        )
        notes.extend(fit.warnings)
        trees.append(fit.tree)
    state.trees = trees
    return notes
