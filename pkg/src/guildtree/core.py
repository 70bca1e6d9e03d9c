"""Domain types and guild design algebra for guild-structured multi-species
distribution models (MSDMs).

A community of J species is partitioned into G guilds by the terminal nodes
of a binary tree; species within a guild share regression coefficients.
This module holds the shared value types (community data, trees, partitions,
coefficient sets, posterior draws) and the linear algebra that maps guild
coefficients to species-level quantities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CommunityData",
    "TreeNode",
    "GuildTree",
    "GuildPartition",
    "Coefficients",
    "SpeciesCoefficients",
    "PosteriorDraw",
    "expand_guild_design",
    "partition_from_tree",
    "species_coefficients",
    "count_guild_compositions",
    "n_regression_coefficients",
    "model_dimension",
    "single_guild_tree",
    "fully_split_tree",
    "tree_from_groups",
    "canonical_groups",
    "encode_partition",
    "parse_partition",
]

FAMILIES = ("probit", "zip")

# Characters reserved by the canonical partition encoding.
_GROUP_SEP = "|"
_MEMBER_SEP = ","


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Community data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CommunityData:
    """Site-by-species response matrix with a shared site-level design.

    Parameters
    ----------
    responses : (n_sites, n_species) array
        Binary presence-absence or nonnegative integer counts.
    predictors : (n_sites, n_predictors) array
        Site-level predictor values, shared across species.
    species_names, predictor_names : sequences of str
        Column labels; must not contain the ``|`` or ``,`` characters
        reserved by the canonical partition encoding.
    period_index : optional (n_sites,) int array
        Sampling-period label per site, values in {1, ..., T}.  Required
        whenever the model allows period-varying guilds.
    holdout_mask : optional (n_sites,) bool array
        True marks sites reserved for out-of-sample scoring.
    """

    responses: np.ndarray
    predictors: np.ndarray
    species_names: tuple[str, ...]
    predictor_names: tuple[str, ...]
    period_index: np.ndarray | None = None
    holdout_mask: np.ndarray | None = None

    def __post_init__(self):
        responses = _frozen_array(self.responses)
        predictors = _frozen_array(self.predictors)
        if responses.ndim != 2 or predictors.ndim != 2:
            raise ValueError("responses and predictors must be 2-D")
        if responses.shape[0] != predictors.shape[0]:
            raise ValueError(
                f"site count mismatch: {responses.shape[0]} response rows vs "
                f"{predictors.shape[0]} predictor rows"
            )
        if responses.shape[0] < 1:
            raise ValueError("at least one site is required")
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "predictors", predictors)
        object.__setattr__(self, "species_names", tuple(self.species_names))
        object.__setattr__(self, "predictor_names", tuple(self.predictor_names))
        if len(self.species_names) != responses.shape[1]:
            raise ValueError("species_names length does not match responses")
        if len(self.predictor_names) != predictors.shape[1]:
            raise ValueError("predictor_names length does not match predictors")
        for name in self.species_names + self.predictor_names:
            if _GROUP_SEP in name or _MEMBER_SEP in name:
                raise ValueError(f"label {name!r} contains a reserved character")
        if not np.all(np.isfinite(predictors)):
            raise ValueError("predictors contain missing or non-finite values")
        if self.period_index is not None:
            pidx = _frozen_array(self.period_index, dtype=int)
            if pidx.shape != (responses.shape[0],):
                raise ValueError("period_index must have one label per site")
            if pidx.min() < 1:
                raise ValueError("period labels must be in {1, ..., T}")
            object.__setattr__(self, "period_index", pidx)
        if self.holdout_mask is not None:
            mask = _frozen_array(self.holdout_mask, dtype=bool)
            if mask.shape != (responses.shape[0],):
                raise ValueError("holdout_mask must have one flag per site")
            object.__setattr__(self, "holdout_mask", mask)

    @property
    def n_sites(self) -> int:
        return self.responses.shape[0]

    @property
    def n_species(self) -> int:
        return self.responses.shape[1]

    @property
    def n_predictors(self) -> int:
        return self.predictors.shape[1]

    @property
    def n_periods(self) -> int:
        if self.period_index is None:
            return 1
        return int(self.period_index.max())

    def validate_for(self, family: str) -> None:
        """Check response support for the given data family."""
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
        y = self.responses
        if family == "probit":
            if not np.isin(y, (0.0, 1.0)).all():
                bad = np.argwhere(~np.isin(y, (0.0, 1.0)))[0]
                raise ValueError(
                    f"presence-absence responses must be 0/1; found {y[tuple(bad)]} "
                    f"at site {bad[0]}, species {self.species_names[bad[1]]!r}"
                )
        else:
            if (y < 0).any() or not np.all(y == np.floor(y)):
                bad = np.argwhere((y < 0) | (y != np.floor(y)))[0]
                raise ValueError(
                    f"abundance responses must be nonnegative integers; found "
                    f"{y[tuple(bad)]} at site {bad[0]}, species "
                    f"{self.species_names[bad[1]]!r}"
                )

    def subset(self, site_mask: np.ndarray) -> "CommunityData":
        """Restrict to the sites where ``site_mask`` is True."""
        site_mask = np.asarray(site_mask, dtype=bool)
        return CommunityData(
            responses=self.responses[site_mask],
            predictors=self.predictors[site_mask],
            species_names=self.species_names,
            predictor_names=self.predictor_names,
            period_index=None if self.period_index is None else self.period_index[site_mask],
            holdout_mask=None if self.holdout_mask is None else self.holdout_mask[site_mask],
        )

    def fit_subset(self) -> "CommunityData":
        """Sites used for model fitting (holdout excluded)."""
        if self.holdout_mask is None:
            return self
        return self.subset(~self.holdout_mask)

    def holdout_subset(self) -> "CommunityData":
        """Sites reserved for predictive scoring."""
        if self.holdout_mask is None or not self.holdout_mask.any():
            raise ValueError("no holdout sites present")
        return self.subset(self.holdout_mask)

    def period_sites(self) -> list[np.ndarray]:
        """Site indices per period, in period order 1..T."""
        if self.period_index is None:
            return [np.arange(self.n_sites)]
        return [np.flatnonzero(self.period_index == t + 1) for t in range(self.n_periods)]


# ---------------------------------------------------------------------------
# Guild trees and partitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    """Node of a binary guild tree; holds the species subset it covers."""

    species: tuple[int, ...]
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(sorted(self.species)))
        if (self.left is None) != (self.right is None):
            raise ValueError("internal nodes must have exactly two children")
        if self.left is not None:
            merged = tuple(sorted(self.left.species + self.right.species))
            if merged != self.species:
                raise ValueError("children must partition the parent's species")
            if not self.left.species or not self.right.species:
                raise ValueError("children must be nonempty")

    @property
    def is_terminal(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class GuildTree:
    """Binary tree over species indices {0, ..., J-1}.

    Terminal nodes are the guilds; they are indexed left-to-right so that
    guild labels are reproducible for a given topology.  Guild identity is
    not tracked across posterior draws.
    """

    root: TreeNode
    n_species: int

    def __post_init__(self):
        seen = sorted(s for node in self.terminal_nodes for s in node.species)
        if seen != list(range(self.n_species)):
            raise ValueError(
                "terminal species subsets must partition {0..J-1}: got "
                f"{seen} for J={self.n_species}"
            )

    @cached_property
    def terminal_nodes(self) -> tuple[TreeNode, ...]:
        out: list[TreeNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_terminal:
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return tuple(out)

    @cached_property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        """Species subsets of the terminal nodes, left-to-right."""
        return tuple(node.species for node in self.terminal_nodes)

    @property
    def n_guilds(self) -> int:
        return len(self.terminal_nodes)

    @cached_property
    def guild_of(self) -> np.ndarray:
        """(J,) array mapping species index to terminal-node index."""
        out = np.empty(self.n_species, dtype=np.intp)
        for g, members in enumerate(self.groups):
            out[list(members)] = g
        out.setflags(write=False)
        return out

    def canonical_key(self) -> tuple[tuple[int, ...], ...]:
        """Label-invariant partition key (guild order forgotten)."""
        return canonical_groups(self.groups)


@dataclass(frozen=True)
class GuildPartition:
    """Species-to-guild membership indicators.

    ``z`` is the J x G binary matrix with exactly one 1 per row; column g
    marks the members of guild g.
    """

    z: np.ndarray

    def __post_init__(self):
        z = _frozen_array(self.z)
        if z.ndim != 2:
            raise ValueError("z must be a J x G matrix")
        if not np.isin(z, (0.0, 1.0)).all():
            raise ValueError("z entries must be 0 or 1")
        if not np.all(z.sum(axis=1) == 1):
            raise ValueError("each species must belong to exactly one guild")
        if not np.all(z.sum(axis=0) >= 1):
            raise ValueError("every guild must contain at least one species")
        object.__setattr__(self, "z", z)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], n_species: int) -> "GuildPartition":
        z = np.zeros((n_species, len(groups)))
        for g, members in enumerate(groups):
            z[list(members), g] = 1.0
        return cls(z)

    @property
    def n_species(self) -> int:
        return self.z.shape[0]

    @property
    def n_guilds(self) -> int:
        return self.z.shape[1]

    @cached_property
    def guild_of(self) -> np.ndarray:
        out = np.argmax(self.z, axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(np.flatnonzero(self.z[:, g]).tolist()) for g in range(self.n_guilds)
        )


def partition_from_tree(tree: GuildTree) -> GuildPartition:
    """Membership matrix induced by a tree's terminal nodes.

    Column order follows the left-to-right terminal order of the tree.
    """
    return GuildPartition.from_groups(tree.groups, tree.n_species)


def single_guild_tree(n_species: int) -> GuildTree:
    """Tree with no splits: one guild containing every species."""
    return GuildTree(TreeNode(tuple(range(n_species))), n_species)


def fully_split_tree(n_species: int) -> GuildTree:
    """Caterpillar tree whose terminal nodes are all singletons."""
    return tree_from_groups([(j,) for j in range(n_species)], n_species)


def tree_from_groups(groups: Sequence[Sequence[int]], n_species: int) -> GuildTree:
    """Build a tree whose terminal nodes are exactly ``groups``.

    Only the induced partition is meaningful downstream, so a caterpillar
    topology (peel one group off at a time) is used.
    """
    groups = [tuple(sorted(g)) for g in groups]
    if not groups:
        raise ValueError("at least one group required")

    def build(remaining: list[tuple[int, ...]]) -> TreeNode:
        if len(remaining) == 1:
            return TreeNode(remaining[0])
        head = TreeNode(remaining[0])
        rest = build(remaining[1:])
        merged = tuple(sorted(sum(remaining, ())))
        return TreeNode(merged, head, rest)

    return GuildTree(build(groups), n_species)


# ---------------------------------------------------------------------------
# Coefficients and posterior draws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coefficients:
    """Per-species intercepts plus guild-level coefficients per period.

    ``gammas[t]`` is the (G_t, K) guild coefficient matrix for period t;
    single-period models use a one-element tuple.
    """

    alpha: np.ndarray
    gammas: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen_array(self.alpha))
        object.__setattr__(
            self, "gammas", tuple(_frozen_array(g) for g in self.gammas)
        )
        k = {g.shape[1] for g in self.gammas}
        if len(k) > 1:
            raise ValueError("all periods must share the same predictor count")


@dataclass(frozen=True)
class SpeciesCoefficients:
    """Species-level coefficients derived from one posterior draw."""

    beta: np.ndarray  # (J, K)
    w: np.ndarray  # (J, G) membership used in the derivation

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta))
        object.__setattr__(self, "w", _frozen_array(self.w))


@dataclass(frozen=True)
class PosteriorDraw:
    """One retained MCMC state.

    ``phi`` and ``sigma2`` are populated by the abundance (ZIP) family and
    left ``None`` for presence-absence fits.
    """

    coefficients: Coefficients
    trees: tuple[GuildTree, ...]
    draw_index: int
    phi: float | None = None
    sigma2: float | None = None

    def __post_init__(self):
        if len(self.trees) != len(self.coefficients.gammas):
            raise ValueError("one tree per period is required")
        for tree, gamma in zip(self.trees, self.coefficients.gammas):
            if tree.n_guilds != gamma.shape[0]:
                raise ValueError(
                    f"gamma rows ({gamma.shape[0]}) do not match guild count "
                    f"({tree.n_guilds})"
                )

    @property
    def alpha(self) -> np.ndarray:
        return self.coefficients.alpha

    @property
    def gammas(self) -> tuple[np.ndarray, ...]:
        return self.coefficients.gammas

    @property
    def n_periods(self) -> int:
        return len(self.trees)


# ---------------------------------------------------------------------------
# Guild design algebra
# ---------------------------------------------------------------------------

def expand_guild_design(
    x: np.ndarray, partition: GuildPartition, gamma_flat: np.ndarray
) -> np.ndarray:
    """Linear-predictor contribution (x' kron Z) gamma for one site.

    ``gamma_flat`` must be flattened predictor-major: guild index varies
    fastest, i.e. (g=1..G for k=1, then g=1..G for k=2, ...).  Species j in
    guild g receives sum_k x_k * gamma[g, k].
    """
    x = np.asarray(x, dtype=float).ravel()
    gamma_flat = np.asarray(gamma_flat, dtype=float).ravel()
    n_guilds = partition.n_guilds
    if gamma_flat.size % n_guilds != 0:
        raise ValueError(
            f"gamma length {gamma_flat.size} is not a multiple of G={n_guilds}"
        )
    n_pred = gamma_flat.size // n_guilds
    if x.size != n_pred:
        raise ValueError(
            f"predictor vector length {x.size} does not match K={n_pred} "
            "implied by gamma"
        )
    gamma = gamma_flat.reshape(n_pred, n_guilds).T  # (G, K)
    return partition.z @ (gamma @ x)


def flatten_gamma(gamma: np.ndarray) -> np.ndarray:
    """Flatten a (G, K) coefficient matrix predictor-major (guild fastest)."""
    return np.asarray(gamma, dtype=float).T.ravel()


def species_coefficients(draw: PosteriorDraw, period: int = 0) -> SpeciesCoefficients:
    """Species-level coefficients beta_j for one period of a draw.

    Each species inherits the coefficient row of its guild, so species that
    share a terminal node have identical rows.
    """
    tree = draw.trees[period]
    gamma = draw.gammas[period]
    partition = partition_from_tree(tree)
    beta = gamma[tree.guild_of, :]
    return SpeciesCoefficients(beta=beta, w=partition.z)


# ---------------------------------------------------------------------------
# Combinatorics and parameter accounting
# ---------------------------------------------------------------------------

def count_guild_compositions(n_species: int) -> int:
    """Number of distinct guilds (nonempty species subsets): 2^J - 1.

    Python integers are unbounded, so the result is exact for any J >= 1.
    """
    if not isinstance(n_species, (int, np.integer)) or n_species < 1:
        raise ValueError(f"species count must be a positive integer, got {n_species!r}")
    return 2 ** int(n_species) - 1


def _guild_count(p) -> int:
    if isinstance(p, GuildPartition):
        return p.n_guilds
    if isinstance(p, GuildTree):
        return p.n_guilds
    if isinstance(p, (int, np.integer)) and p >= 1:
        return int(p)
    raise ValueError(f"expected a partition or positive guild count, got {p!r}")


def n_regression_coefficients(partitions, n_predictors: int) -> int:
    """Total guild-level regression coefficients: sum over periods of G_t * K."""
    if isinstance(partitions, (GuildPartition, GuildTree, int, np.integer)):
        partitions = [partitions]
    return sum(_guild_count(p) * n_predictors for p in partitions)


def model_dimension(partitions, n_species: int, n_predictors: int, family: str) -> int:
    """Parameter count: J intercepts + sum_t G_t*K coefficients + family scalars.

    The ZIP family adds the mixture probability and the process variance.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    extra = 2 if family == "zip" else 0
    return n_species + n_regression_coefficients(partitions, n_predictors) + extra


# ---------------------------------------------------------------------------
# Canonical partition encoding
# ---------------------------------------------------------------------------

def canonical_groups(groups: Iterable[Iterable[int]]) -> tuple[tuple[int, ...], ...]:
    """Sort members within groups and groups by smallest member."""
    return tuple(sorted(tuple(sorted(g)) for g in groups))


def encode_partition(groups: Iterable[Iterable[int]], names: Sequence[str]) -> str:
    """Canonical text encoding of a partition, by species name.

    Members are sorted within each group and groups lexicographically by
    their sorted name lists, so the encoding does not depend on species
    column order or on how the partition was produced.
    """
    blocks = sorted(sorted(names[j] for j in g) for g in groups)
    return _GROUP_SEP.join(_MEMBER_SEP.join(b) for b in blocks)


def parse_partition(text: str, names: Sequence[str]) -> tuple[tuple[int, ...], ...]:
    """Inverse of :func:`encode_partition` for a given name order."""
    index = {name: j for j, name in enumerate(names)}
    groups = []
    for block in text.split(_GROUP_SEP):
        members = []
        for name in block.split(_MEMBER_SEP):
            if name not in index:
                raise ValueError(f"unknown species {name!r} in partition encoding")
            members.append(index[name])
        groups.append(tuple(sorted(members)))
    flat = sorted(m for g in groups for m in g)
    if flat != list(range(len(names))):
        raise ValueError("partition encoding does not cover every species exactly once")
    return canonical_groups(groups)
