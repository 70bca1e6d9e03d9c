"""Tree learner: the homogeneity test, split search, and the tree prior."""

import itertools

import numpy as np
import pytest
from scipy.stats import chi2

from guildtree.learner import (
    LearnerConfig,
    PseudoData,
    TreePriorConfig,
    fit_tree,
    sample_tree_prior,
)


def make_pseudo(slopes, n=200, noise=0.5, seed=0):
    """Single-predictor pseudo-data with known per-species slopes."""
    rng = np.random.default_rng(seed)
    slopes = np.asarray(slopes, dtype=float)
    x = rng.normal(size=(n, 1))
    r = x * slopes[None, :] + noise * rng.normal(size=(n, slopes.size))
    return PseudoData(x=x, r=r)


def pooled_ols(x, r, members):
    """Stack a subset's responses and fit one OLS directly.

    Deliberately avoids the learner's shared-Gram shortcut so it can act
    as an independent oracle for coefficients and RSS.
    """
    m = len(members)
    xs = np.vstack([x] * m)
    ys = np.concatenate([r[:, j] for j in members])
    coef, *_ = np.linalg.lstsq(xs, ys, rcond=None)
    resid = ys - xs @ coef
    return coef, float(resid @ resid)


def bipartitions(members):
    """Every unordered two-block split of a species set."""
    members = list(members)
    anchor, rest = members[0], members[1:]
    out = []
    for size in range(len(rest)):
        for combo in itertools.combinations(rest, size):
            a = frozenset((anchor, *combo))
            out.append((a, frozenset(members) - a))
    return out


def groups_as_sets(tree):
    return {frozenset(g) for g in tree.groups}


class TestFitTree:
    def test_recovers_first_split(self):
        # Two latent guilds with opposite slopes; the root must separate them.
        data = make_pseudo([-1, -1, -1, 1, 1, 1], n=200, noise=0.5, seed=3)
        fit = fit_tree(data, LearnerConfig(alpha=0.05))
        root = fit.tree.root
        assert not root.is_terminal
        children = {frozenset(root.left.species), frozenset(root.right.species)}
        assert children == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
        assert groups_as_sets(fit.tree) == children

    def test_alpha_zero_forces_single_guild(self):
        data = make_pseudo([-2, -1, 0, 1, 2], seed=1)
        fit = fit_tree(data, LearnerConfig(alpha=0.0))
        assert fit.tree.n_guilds == 1
        assert fit.tree.root.is_terminal
        assert fit.tests == ()

    def test_alpha_one_splits_to_singletons(self):
        data = make_pseudo([-2, -1, 0, 1, 2], seed=1)
        fit = fit_tree(data, LearnerConfig(alpha=1.0))
        assert fit.tree.n_guilds == 5
        assert all(len(g) == 1 for g in fit.tree.groups)

    def test_guild_count_monotone_at_endpoints(self):
        data = make_pseudo([-1, -1, -1, 1, 1, 1], seed=3)
        counts = [
            fit_tree(data, LearnerConfig(alpha=a)).tree.n_guilds
            for a in (0.0, 0.05, 1.0)
        ]
        assert counts[0] == 1
        assert counts[0] <= counts[1] <= counts[2]

    def test_four_species_node_has_seven_candidates(self):
        assert len(bipartitions(range(4))) == 7

    def test_root_split_is_rss_argmin(self):
        # With alpha=1 the root always splits, so the chosen bipartition
        # must match a brute-force scan over all 7 candidates.
        for seed in range(20):
            rng = np.random.default_rng(seed)
            data = PseudoData(
                x=rng.normal(size=(25, 1)), r=rng.normal(size=(25, 4))
            )
            fit = fit_tree(data, LearnerConfig(alpha=1.0, max_depth=1))
            got = {
                frozenset(fit.tree.root.left.species),
                frozenset(fit.tree.root.right.species),
            }
            scored = [
                (
                    pooled_ols(data.x, data.r, sorted(a))[1]
                    + pooled_ols(data.x, data.r, sorted(b))[1],
                    (a, b),
                )
                for a, b in bipartitions(range(4))
            ]
            best_rss = min(s[0] for s in scored)
            best = next(set(pair) for rss, pair in scored if rss == best_rss)
            assert got == best, f"seed {seed}: {got} vs {best}"

    def test_two_species_opposite_slopes(self):
        # Only one candidate bipartition exists and the signal demands it.
        data = make_pseudo([-1, 1], n=150, seed=7)
        fit = fit_tree(data, LearnerConfig(alpha=0.05))
        assert groups_as_sets(fit.tree) == {frozenset({0}), frozenset({1})}

    def test_heuristic_scan_matches_exhaustive_for_one_predictor(self):
        # A contiguous cut in slope order is optimal when K=1, so the
        # large-node fallback must reproduce the exhaustive tree exactly.
        for seed in range(50):
            rng = np.random.default_rng(100 + seed)
            slopes = rng.normal(size=8)
            data = make_pseudo(slopes, n=30, noise=0.3, seed=200 + seed)
            full = fit_tree(data, LearnerConfig(alpha=1.0, max_exhaustive_subset=12))
            scan = fit_tree(data, LearnerConfig(alpha=1.0, max_exhaustive_subset=2))
            assert full.tree.groups == scan.tree.groups, f"seed {seed}"

    def test_terminal_rss_never_exceeds_root_rss(self):
        data = make_pseudo([-1, -1, 0.5, 1, 1], seed=11)
        fit = fit_tree(data, LearnerConfig(alpha=0.05))
        _, root_rss = pooled_ols(data.x, data.r, range(data.n_species))
        split_rss = sum(
            pooled_ols(data.x, data.r, g)[1] for g in fit.tree.groups
        )
        assert split_rss <= root_rss + 1e-9

    def test_terminal_coefficients_are_pooled_ols(self):
        rng = np.random.default_rng(5)
        data = PseudoData(x=rng.normal(size=(40, 2)), r=rng.normal(size=(40, 5)))
        fit = fit_tree(data, LearnerConfig(alpha=0.2))
        for g, group in enumerate(fit.tree.groups):
            expected, _ = pooled_ols(data.x, data.r, group)
            np.testing.assert_allclose(fit.terminal_coefs[g], expected, atol=1e-9)

    def test_node_test_matches_chi2_oracle(self):
        data = make_pseudo([-1, -0.5, 0.5, 1], n=80, seed=2)
        fit = fit_tree(data, LearnerConfig(alpha=0.05))
        root_test = fit.tests[0]
        assert root_test.species == (0, 1, 2, 3)
        assert root_test.df == 3  # (|S| - 1) * K

        _, rss_pooled = pooled_ols(data.x, data.r, range(4))
        rss_species = sum(pooled_ols(data.x, data.r, [j])[1] for j in range(4))
        n_node = 4 * data.n_sites
        stat = n_node * np.log(rss_pooled / rss_species)
        np.testing.assert_allclose(root_test.statistic, stat, rtol=1e-9)
        np.testing.assert_allclose(
            root_test.pvalue, chi2.sf(stat, root_test.df), rtol=1e-9, atol=1e-300
        )

    def test_deterministic(self):
        data = make_pseudo([-1, 0, 1, 1], seed=13)
        a = fit_tree(data, LearnerConfig(alpha=0.1))
        b = fit_tree(data, LearnerConfig(alpha=0.1))
        assert a.tree.groups == b.tree.groups
        assert np.array_equal(a.terminal_coefs, b.terminal_coefs)

    def test_singular_design_stops_splitting_with_warning(self):
        rng = np.random.default_rng(0)
        x = np.ones((20, 2))  # duplicated constant columns: singular Gram
        data = PseudoData(x=x, r=rng.normal(size=(20, 4)))
        fit = fit_tree(data, LearnerConfig(alpha=1.0))
        assert fit.tree.n_guilds == 1
        assert fit.warnings and "singular" in fit.warnings[0]

    def test_min_node_species_blocks_otherwise_clear_split(self):
        data = make_pseudo([-1, -1, 1, 1], n=300, noise=0.2, seed=4)
        fit = fit_tree(data, LearnerConfig(alpha=0.05, min_node_species=3))
        # 4 species cannot produce two children of size >= 3.
        assert fit.tree.n_guilds == 1
        assert fit.tests[0].split is False

    def test_max_depth_limits_growth(self):
        data = make_pseudo([-2, -1, 0, 1, 2, 3], seed=9)
        fit = fit_tree(data, LearnerConfig(alpha=1.0, max_depth=1))
        assert fit.tree.n_guilds == 2

    def test_pseudo_data_validation(self):
        with pytest.raises(ValueError, match="same number of rows"):
            PseudoData(x=np.zeros((3, 1)), r=np.zeros((4, 2)))
        with pytest.raises(ValueError, match="non-finite"):
            PseudoData(x=np.zeros((3, 1)), r=np.array([[np.nan], [0.0], [1.0]]))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            LearnerConfig(alpha=1.5)
        with pytest.raises(ValueError, match="min_node_species"):
            LearnerConfig(min_node_species=0)


class TestTreePrior:
    def test_p_split_zero_always_one_guild(self, rng):
        cfg = TreePriorConfig(p_split=0.0)
        for _ in range(20):
            assert sample_tree_prior(6, cfg, rng).n_guilds == 1

    def test_p_split_one_always_singletons(self, rng):
        cfg = TreePriorConfig(p_split=1.0, max_depth=10)
        for _ in range(20):
            tree = sample_tree_prior(6, cfg, rng)
            assert tree.n_guilds == 6

    def test_two_species_split_frequency(self):
        # P(2 guilds) = p_split exactly for J=2.
        p, draws = 0.3, 100_000
        rng = np.random.default_rng(42)
        cfg = TreePriorConfig(p_split=p)
        hits = sum(
            sample_tree_prior(2, cfg, rng).n_guilds == 2 for _ in range(draws)
        )
        se = np.sqrt(p * (1 - p) / draws)
        assert abs(hits / draws - p) < 3 * se

    def test_three_species_guild_count_distribution(self):
        # Root splits w.p. p into a singleton plus a pair (each of the three
        # bipartitions equally likely); the pair then splits w.p. p:
        #   P(G=1) = 1-p,  P(G=2) = p(1-p),  P(G=3) = p^2.
        p, draws = 0.4, 60_000
        rng = np.random.default_rng(7)
        cfg = TreePriorConfig(p_split=p)
        counts = np.zeros(4)
        pair_partitions = {}
        for _ in range(draws):
            tree = sample_tree_prior(3, cfg, rng)
            counts[tree.n_guilds] += 1
            if tree.n_guilds == 2:
                key = frozenset(frozenset(g) for g in tree.groups)
                pair_partitions[key] = pair_partitions.get(key, 0) + 1
        expected = {1: 1 - p, 2: p * (1 - p), 3: p * p}
        for g, prob in expected.items():
            se = np.sqrt(prob * (1 - prob) / draws)
            assert abs(counts[g] / draws - prob) < 3 * se, f"G={g}"
        # The three two-guild partitions are exchangeable.
        assert len(pair_partitions) == 3
        each = p * (1 - p) / 3
        se = np.sqrt(each * (1 - each) / draws)
        for key, n in pair_partitions.items():
            assert abs(n / draws - each) < 3 * se, key

    def test_max_depth_one_stops_after_root(self):
        rng = np.random.default_rng(1)
        cfg = TreePriorConfig(p_split=1.0, max_depth=1)
        for _ in range(20):
            assert sample_tree_prior(4, cfg, rng).n_guilds == 2

    def test_max_depth_zero_never_splits(self):
        rng = np.random.default_rng(1)
        cfg = TreePriorConfig(p_split=1.0, max_depth=0)
        assert sample_tree_prior(5, cfg, rng).n_guilds == 1

    def test_draws_are_valid_partitions(self, rng):
        cfg = TreePriorConfig(p_split=0.7)
        for _ in range(50):
            tree = sample_tree_prior(7, cfg, rng)
            members = sorted(s for g in tree.groups for s in g)
            assert members == list(range(7))

    def test_prior_config_validation(self):
        with pytest.raises(ValueError, match="p_split"):
            TreePriorConfig(p_split=-0.1)
        with pytest.raises(ValueError, match="max_depth"):
            TreePriorConfig(max_depth=-1)
