"""Guild tree estimation by model-based recursive partitioning.

Given per-species pseudo-responses regressed on a shared site design, a
binary tree is grown top-down: a node splits while a likelihood-ratio test
rejects coefficient homogeneity across its species.  Terminal nodes are the
guilds.  A stochastic tree-generating process with the same support provides
the prior used for model averaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.special import gammaincc

from guildtree.core import GuildTree, TreeNode

__all__ = [
    "LearnerConfig",
    "TreePriorConfig",
    "PseudoData",
    "NodeTest",
    "TreeFit",
    "instability_pvalue",
    "split_search",
    "fit_tree",
    "sample_tree_prior",
]

# Pooled-vs-species RSS ratios below this are treated as exact fits.
_RSS_FLOOR = 1e-12


@dataclass(frozen=True)
class LearnerConfig:
    """Tuning for the tree learner.

    ``alpha`` is the significance level of the homogeneity test; 0 forces a
    single guild and 1 splits down to singletons whenever the data carry
    any signal.  ``max_exhaustive_subset`` bounds the node size for which
    every bipartition is scored; larger nodes fall back to a contiguous
    scan in slope order, which is exact for a single predictor.
    """

    alpha: float = 0.05
    min_node_species: int = 1
    max_exhaustive_subset: int = 12
    max_depth: int | None = None
    # Reserved for stochastic tie-breaking; the current rules are
    # deterministic, so the seed is carried but never consumed.
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.min_node_species < 1:
            raise ValueError("min_node_species must be >= 1")
        if self.max_exhaustive_subset < 2:
            raise ValueError("max_exhaustive_subset must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")


@dataclass(frozen=True)
class TreePriorConfig:
    """Tree-generating process: split with probability ``p_split`` and send
    each species to a child by a fair coin, redrawing assignments that would
    leave a child empty."""

    p_split: float = 0.5
    max_depth: int = 10

    def __post_init__(self):
        if not 0.0 <= self.p_split <= 1.0:
            raise ValueError(f"p_split must be in [0, 1], got {self.p_split}")
        if self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")


@dataclass(frozen=True)
class PseudoData:
    """Shared site design with one pseudo-response column per species."""

    x: np.ndarray  # (n, K)
    r: np.ndarray  # (n, J)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if x.ndim != 2 or r.ndim != 2:
            raise ValueError("x and r must be 2-D")
        if x.shape[0] != r.shape[0]:
            raise ValueError("x and r must have the same number of rows")
        if x.shape[1] < 1:
            raise ValueError("at least one predictor is required")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(r))):
            raise ValueError("pseudo-data contain non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)

    @property
    def n_sites(self) -> int:
        return self.x.shape[0]

    @property
    def n_species(self) -> int:
        return self.r.shape[1]

    @property
    def n_predictors(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class NodeTest:
    """Homogeneity test record for one internal-node decision."""

    species: tuple[int, ...]
    statistic: float
    df: int
    pvalue: float
    split: bool


@dataclass(frozen=True)
class TreeFit:
    """Learned tree plus pooled OLS coefficients at its terminal nodes."""

    tree: GuildTree
    terminal_coefs: np.ndarray  # (G, K)
    tests: tuple[NodeTest, ...] = ()
    warnings: tuple[str, ...] = ()


class _NodeStats:
    """Sufficient statistics exploiting the shared Gram matrix.

    Every species is observed at every site, so X'X is common to all
    species and the pooled Gram of any subset A is |A| * X'X.  With
    u_j = (X'X)^{-1} v_j precomputed, subset fits reduce to sums:

        coef_A = sum_A u_j / |A|
        RSS_A  = sum_A q_j - (sum_A v_j) . (sum_A u_j) / |A|
    """

    def __init__(self, data: PseudoData):
        self.n = data.n_sites
        self.k = data.n_predictors
        xtx = data.x.T @ data.x
        v = data.x.T @ data.r  # (K, J)
        self.q = np.einsum("ij,ij->j", data.r, data.r)  # (J,)
        self.degenerate = False
        try:
            if self.n < self.k:
                raise np.linalg.LinAlgError("fewer sites than predictors")
            u = np.linalg.solve(xtx, v)
            if not np.all(np.isfinite(u)):
                raise np.linalg.LinAlgError("non-finite solve")
        except np.linalg.LinAlgError:
            self.degenerate = True
            u, *_ = np.linalg.lstsq(xtx, v, rcond=None)
        self.v = v
        self.u = u  # (K, J) per-species OLS coefficients
        self.xtx_diag = np.diag(xtx)
        # Per-species exact-fit residual sums of squares.
        self.species_rss = np.maximum(self.q - np.einsum("kj,kj->j", v, u), 0.0)

    def pooled(self, members: np.ndarray) -> tuple[np.ndarray, float]:
        """Pooled OLS coefficients and RSS over a species subset."""
        m = len(members)
        v_sum = self.v[:, members].sum(axis=1)
        u_sum = self.u[:, members].sum(axis=1)
        coef = u_sum / m
        rss = self.q[members].sum() - float(v_sum @ u_sum) / m
        return coef, max(rss, 0.0)


def instability_pvalue(stats: _NodeStats, members: np.ndarray) -> tuple[float, float, int]:
    """Likelihood-ratio test of shared vs per-species coefficients.

    Returns (statistic, pvalue, df).  The statistic is n_node times the log
    ratio of pooled to unrestricted RSS; its null distribution is chi-square
    with (|S| - 1) * K degrees of freedom.
    """
    m = len(members)
    df = (m - 1) * stats.k
    _, rss_pooled = stats.pooled(members)
    rss_species = float(stats.species_rss[members].sum())
    scale = max(rss_pooled, rss_species, 1.0)
    if rss_species <= _RSS_FLOOR * scale:
        if rss_pooled <= _RSS_FLOOR * scale:
            return 0.0, 1.0, df
        return np.inf, 0.0, df
    n_node = m * stats.n
    stat = n_node * max(np.log(rss_pooled / rss_species), 0.0)
    pvalue = float(gammaincc(df / 2.0, stat / 2.0))
    return stat, pvalue, df


def _unstable_predictor(stats: _NodeStats, members: np.ndarray) -> int:
    """Predictor whose per-species estimates vary most across the node.

    Spread is measured on the Gram-weighted scale so the choice does not
    depend on predictor units.
    """
    est = stats.u[:, members]  # (K, m)
    spread = est.var(axis=1) * stats.xtx_diag
    return int(np.argmax(spread))


def _candidate_key(members: np.ndarray, side: np.ndarray) -> tuple:
    """Deterministic tie-break key: the sorted subset that contains the
    node's smallest species index."""
    side_set = set(side.tolist())
    if int(members.min()) in side_set:
        canon = tuple(sorted(side_set))
    else:
        canon = tuple(sorted(set(members.tolist()) - side_set))
    return canon


def split_search(
    stats: _NodeStats, members: np.ndarray, config: LearnerConfig
) -> tuple[np.ndarray, np.ndarray] | None:
    """Best bipartition of a node by summed pooled RSS of the two children.

    All bipartitions are scored when the node is small enough; otherwise
    species are ordered by their estimate of the most unstable predictor
    and only contiguous cuts of that ordering are scored.  Ties break on
    the lexicographically smallest subset containing the node's smallest
    species index.  Returns None when no bipartition satisfies the
    minimum child size.
    """
    members = np.asarray(members)
    m = len(members)
    lo = config.min_node_species
    if m < 2 * lo:
        return None

    candidates: list[np.ndarray] = []
    if m <= config.max_exhaustive_subset:
        rest = members[1:].tolist()
        anchor = int(members[0])
        # Fixing the smallest member on one side enumerates each unordered
        # bipartition exactly once.
        for size in range(0, m - 1):
            for combo in combinations(rest, size):
                side = np.array([anchor, *combo], dtype=members.dtype)
                if lo <= len(side) <= m - lo:
                    candidates.append(np.sort(side))
    else:
        k_star = _unstable_predictor(stats, members)
        order = members[np.argsort(stats.u[k_star, members], kind="stable")]
        for cut in range(lo, m - lo + 1):
            candidates.append(np.sort(order[:cut]))

    if not candidates:
        return None

    best = None
    best_key = None
    for side in candidates:
        other = np.setdiff1d(members, side, assume_unique=True)
        _, rss_a = stats.pooled(side)
        _, rss_b = stats.pooled(other)
        key = (rss_a + rss_b, _candidate_key(members, side))
        if best_key is None or key < best_key:
            best_key = key
            best = (side, other)

    side, other = best
    # Child order: the subset holding the smallest index goes left.
    if int(members.min()) in set(side.tolist()):
        return side, other
    return other, side


def fit_tree(data: PseudoData, config: LearnerConfig | None = None) -> TreeFit:
    """Grow a guild tree on pseudo-data by recursive homogeneity testing.

    Each node is split while the chi-square instability test rejects at
    level ``config.alpha`` and a valid bipartition exists; the tree and the
    pooled coefficients of its terminal nodes are returned.  A singular
    site design stops all splitting and is reported in ``warnings``.
    """
    if config is None:
        config = LearnerConfig()
    stats = _NodeStats(data)
    j = data.n_species
    warnings: list[str] = []
    tests: list[NodeTest] = []

    if stats.degenerate:
        warnings.append(
            "site design is singular; guild tree reduced to a single node"
        )

    def grow(members: np.ndarray, depth: int) -> TreeNode:
        leaf = TreeNode(tuple(members.tolist()))
        if len(members) < 2 or stats.degenerate:
            return leaf
        if config.alpha <= 0.0:
            return leaf
        if config.max_depth is not None and depth >= config.max_depth:
            return leaf
        stat, pvalue, df = instability_pvalue(stats, members)
        decide = pvalue < config.alpha
        if decide:
            found = split_search(stats, members, config)
            if found is None:
                decide = False
        tests.append(
            NodeTest(tuple(members.tolist()), float(stat), df, pvalue, decide)
        )
        if not decide:
            return leaf
        left, right = found
        return TreeNode(
            tuple(members.tolist()),
            grow(left, depth + 1),
            grow(right, depth + 1),
        )

    root = grow(np.arange(j), 0)
    tree = GuildTree(root, j)
    coefs = np.empty((tree.n_guilds, data.n_predictors))
    for g, group in enumerate(tree.groups):
        coefs[g], _ = stats.pooled(np.asarray(group))
    return TreeFit(tree, coefs, tuple(tests), tuple(warnings))


def sample_tree_prior(
    n_species: int, config: TreePriorConfig, rng: np.random.Generator
) -> GuildTree:
    """Draw a guild tree from the generating process.

    Starting from the root, a node with two or more species splits with
    probability ``p_split`` while below ``max_depth``; on a split every
    species joins a child by a fair coin, with assignments redrawn until
    both children are nonempty.
    """

    def grow(members: tuple[int, ...], depth: int) -> TreeNode:
        if len(members) < 2 or depth >= config.max_depth:
            return TreeNode(members)
        if rng.random() >= config.p_split:
            return TreeNode(members)
        while True:
            go_left = rng.random(len(members)) < 0.5
            if go_left.any() and not go_left.all():
                break
        arr = np.asarray(members)
        left = grow(tuple(arr[go_left].tolist()), depth + 1)
        right = grow(tuple(arr[~go_left].tolist()), depth + 1)
        return TreeNode(members, left, right)

    root = grow(tuple(range(n_species)), 0)
    return GuildTree(root, n_species)
