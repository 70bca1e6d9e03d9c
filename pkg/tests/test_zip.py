"""Zero-inflated Poisson sampler: mixture updates, the latent-score
Metropolis step, and chain mechanics."""

import numpy as np
import pytest

from guildtree.inference import mcse_batch_means
from guildtree.simulate import SimSpec, simulate
from guildtree.zip_poisson import (
    MetropolisTuner,
    ZipPriors,
    ZipState,
    phi_posterior_params,
    run_chain_zip,
    sigma2_posterior_params,
    update_inflation_indicators,
    update_latent_z,
    update_phi,
    update_sigma2,
)

from conftest import tiny_data


def single_cell_state(sigma2=1.0, z0=0.0):
    return ZipState(
        alpha=np.zeros(1),
        trees=[],
        gammas=[],
        z=np.array([[z0]]),
        w=np.zeros((1, 1), dtype=np.int64),
        phi=0.0,
        sigma2=sigma2,
        tuner=MetropolisTuner.for_shape((1, 1)),
    )


def run_single_cell_mh(y, mu, sigma2, sweeps, warmup, seed, loglik=None):
    """Metropolis trace for one observed cell with everything else fixed."""
    state = single_cell_state(sigma2=sigma2, z0=float(mu))
    rng = np.random.default_rng(seed)
    ys = np.array([[float(y)]])
    mus = np.array([[float(mu)]])
    trace = np.empty(sweeps - warmup)
    for i in range(sweeps):
        update_latent_z(state, ys, mus, rng, adapt=i < warmup, loglik=loglik)
        if i >= warmup:
            trace[i - warmup] = state.z[0, 0]
    return trace


def z_posterior_mean_quadrature(y, mu, sigma2, lo=-15.0, hi=15.0, m=40_001):
    """Posterior mean of z under N(mu, sigma2) x Pois(y | e^z) on a grid."""
    z = np.linspace(lo, hi, m)
    logw = -0.5 * (z - mu) ** 2 / sigma2 + y * z - np.exp(z)
    w = np.exp(logw - logw.max())
    return float((z * w).sum() / w.sum())


class TestInflationIndicators:
    def test_positive_counts_force_observed(self, rng):
        y = np.array([[5.0, 1.0], [2.0, 7.0]])
        z = np.zeros_like(y)
        w = update_inflation_indicators(y, z, phi=0.9, rng=rng)
        assert not w.any()

    def test_zero_count_posterior_probability(self):
        # phi = 0.5 and e^z = 1: odds phi : (1-phi) e^{-1}, so
        # P(w = 1) = 1 / (1 + e^{-1}).
        n = 200_000
        rng = np.random.default_rng(0)
        y = np.zeros((n, 1))
        z = np.zeros((n, 1))
        w = update_inflation_indicators(y, z, phi=0.5, rng=rng)
        p = 1.0 / (1.0 + np.exp(-1.0))
        se = np.sqrt(p * (1 - p) / n)
        assert abs(w.mean() - p) < 3 * se

    def test_phi_zero_never_structural(self, rng):
        y = np.zeros((40, 3))
        z = rng.normal(size=(40, 3))
        w = update_inflation_indicators(y, z, phi=0.0, rng=rng)
        assert not w.any()

    def test_phi_one_marks_every_zero(self, rng):
        y = np.array([[0.0, 3.0], [0.0, 0.0]])
        z = rng.normal(size=(2, 2))
        w = update_inflation_indicators(y, z, phi=1.0, rng=rng)
        assert w.tolist() == [[1, 0], [1, 1]]


class TestPhi:
    def test_posterior_params_worked_example(self):
        # 10 cells, 3 structural zeros, Beta(1, 1) prior -> Beta(4, 8).
        w = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        assert phi_posterior_params(w) == (4.0, 8.0)

    def test_posterior_params_respect_prior(self):
        w = np.zeros((2, 3))
        assert phi_posterior_params(w, ZipPriors(phi_a=2.0, phi_b=5.0)) == (2.0, 11.0)

    def test_update_moments(self):
        w = np.array([1, 1, 1] + [0] * 7)
        rng = np.random.default_rng(1)
        draws = np.array([update_phi(w, rng) for _ in range(20_000)])
        mean, sd = 4 / 12, np.sqrt(4 * 8 / (12**2 * 13))
        assert abs(draws.mean() - mean) < 3 * sd / np.sqrt(draws.size)


class TestSigma2:
    def test_posterior_params_worked_example(self):
        # Two cells with squared residuals summing to 2:
        # IG(2.01 + 1, 1 + 1).
        z = np.array([[1.0], [-1.0]])
        mu = np.zeros((2, 1))
        assert sigma2_posterior_params(z, mu) == (3.01, 2.0)

    def test_no_cells_returns_prior(self):
        z = np.empty((0, 3))
        mu = np.empty((0, 3))
        assert sigma2_posterior_params(z, mu) == (2.01, 1.0)

    def test_update_moments(self):
        z = np.array([[1.0], [-1.0]])
        mu = np.zeros((2, 1))
        rng = np.random.default_rng(2)
        draws = np.array([update_sigma2(z, mu, rng) for _ in range(50_000)])
        # IG(3.01, 2): mean 2/2.01, variance 4 / (2.01^2 * 1.01).
        mean = 2 / 2.01
        sd = np.sqrt(4 / (2.01**2 * 1.01))
        assert abs(draws.mean() - mean) < 3 * sd / np.sqrt(draws.size)
        assert (draws > 0).all()


class TestLatentZ:
    def test_structural_cells_sample_prior_exactly(self):
        # With w = 1 everywhere the update must equal mu + sd * normals
        # drawn first from the stream: a bit-exact contract, not a moment one.
        shape = (30, 4)
        state = ZipState(
            alpha=np.zeros(4),
            trees=[],
            gammas=[],
            z=np.zeros(shape),
            w=np.ones(shape, dtype=np.int64),
            phi=0.5,
            sigma2=2.25,
            tuner=MetropolisTuner.for_shape(shape),
        )
        mu = np.full(shape, 0.7)
        update_latent_z(state, np.zeros(shape), mu, np.random.default_rng(8), adapt=True)
        expected = mu + 1.5 * np.random.default_rng(8).standard_normal(shape)
        assert np.array_equal(state.z, expected)

    def test_rng_pattern_independent_of_indicators(self):
        # The stream is consumed per cell regardless of w, so a cell that is
        # observed in two different layouts evolves identically.
        y = np.array([[2.0, 0.0]])
        mu = np.zeros((1, 2))
        traces = []
        for w_other in (0, 1):
            state = ZipState(
                alpha=np.zeros(2),
                trees=[],
                gammas=[],
                z=np.array([[0.3, -0.1]]),
                w=np.array([[0, w_other]], dtype=np.int64),
                phi=0.5,
                sigma2=1.0,
                tuner=MetropolisTuner.for_shape((1, 2)),
            )
            rng = np.random.default_rng(3)
            for _ in range(10):
                update_latent_z(state, y, mu, rng, adapt=False)
            traces.append(state.z[0, 0])
        assert traces[0] == traces[1]

    def test_single_cell_matches_quadrature(self):
        # y=3, mu=0, sigma2=1: compare the MH mean to dense numerical
        # integration of the exact conditional.
        trace = run_single_cell_mh(3, 0.0, 1.0, sweeps=42_000, warmup=6_000, seed=4)
        target = z_posterior_mean_quadrature(3, 0.0, 1.0)
        assert abs(trace.mean() - target) < 0.02

    def test_large_count_concentrates_near_log_count(self):
        trace = run_single_cell_mh(50, 0.0, 1.0, sweeps=30_000, warmup=6_000, seed=5)
        target = z_posterior_mean_quadrature(50, 0.0, 1.0)
        assert abs(trace.mean() - target) < 0.02
        assert abs(target - np.log(50)) < 0.1

    def test_gaussian_pseudo_likelihood_closed_form(self):
        # Swapping the Poisson term for a Gaussian makes the target conjugate,
        # so the MH kernel can be checked against exact moments.
        def gauss_loglik(z, y):
            return -0.5 * (z - y) ** 2

        y0, mu, sigma2 = 3.0, 0.0, 1.0
        post_mean = (mu / sigma2 + y0) / (1 / sigma2 + 1)
        post_var = 1.0 / (1 / sigma2 + 1)
        trace = run_single_cell_mh(
            y0, mu, sigma2, sweeps=42_000, warmup=6_000, seed=6, loglik=gauss_loglik
        )
        assert abs(trace.mean() - post_mean) < 4 * mcse_batch_means(trace)
        assert abs(trace.var(ddof=1) - post_var) < 0.05 * post_var


class TestTuner:
    def test_adapts_upward_when_acceptance_high(self):
        tuner = MetropolisTuner.for_shape((1, 1))
        one = np.ones((1, 1), dtype=np.int64)
        for _ in range(tuner.batch_size):
            tuner.record(one, one, adapt=True)
        assert tuner.log_sd[0, 0] == pytest.approx(np.log(0.5) + 0.05)

    def test_adapts_downward_when_acceptance_low(self):
        tuner = MetropolisTuner.for_shape((1, 1))
        zero = np.zeros((1, 1), dtype=np.int64)
        one = np.ones((1, 1), dtype=np.int64)
        for _ in range(tuner.batch_size):
            tuner.record(zero, one, adapt=True)
        assert tuner.log_sd[0, 0] == pytest.approx(np.log(0.5) - 0.05)

    def test_frozen_when_adapt_false(self):
        tuner = MetropolisTuner.for_shape((2, 2))
        before = tuner.log_sd.copy()
        one = np.ones((2, 2), dtype=np.int64)
        for _ in range(2 * tuner.batch_size):
            tuner.record(one, one, adapt=False)
        assert np.array_equal(tuner.log_sd, before)
        assert tuner.batch == 2

    def test_no_move_mid_batch(self):
        tuner = MetropolisTuner.for_shape((1, 1))
        before = tuner.log_sd.copy()
        one = np.ones((1, 1), dtype=np.int64)
        for _ in range(tuner.batch_size - 1):
            tuner.record(one, one, adapt=True)
        assert np.array_equal(tuner.log_sd, before)

    def test_untried_cells_left_alone(self):
        tuner = MetropolisTuner.for_shape((1, 2))
        before = tuner.log_sd.copy()
        acc = np.array([[1, 0]], dtype=np.int64)
        att = np.array([[1, 0]], dtype=np.int64)
        for _ in range(tuner.batch_size):
            tuner.record(acc, att, adapt=True)
        assert tuner.log_sd[0, 0] != before[0, 0]
        assert tuner.log_sd[0, 1] == before[0, 1]


def make_zip_community(
    n_sites=300,
    alpha=(1.2, 0.8, 1.5),
    gammas=((0.6,),),
    groups=((0, 1, 2),),
    phi=0.4,
    sigma2=0.5,
    seed=0,
):
    spec = SimSpec(
        n_sites=n_sites,
        n_species=len(alpha),
        n_predictors=len(gammas[0]),
        family="zip",
        groups=(tuple(tuple(g) for g in groups),),
        alpha=tuple(alpha),
        gammas=(np.asarray(gammas, dtype=float),),
        phi=phi,
        sigma2=sigma2,
    )
    return simulate(spec, seed=seed).data


class TestChain:
    def test_recovers_inflation_probability(self):
        data = make_zip_community(n_sites=400, phi=0.4, seed=10)
        draws = run_chain_zip(
            data,
            iterations=1600,
            thin=2,
            burn=150,
            seed=1,
            fixed_partitions=[((0, 1, 2),)],
        )
        phi = np.array([d.phi for d in draws])
        assert abs(phi.mean() - 0.4) < 0.08

    def test_all_positive_counts_drive_phi_to_zero(self):
        data = make_zip_community(
            n_sites=100, alpha=(2.5, 2.5, 2.5), phi=0.0, sigma2=0.25, seed=11
        )
        assert (data.responses > 0).all()
        draws = run_chain_zip(data, iterations=400, burn=50, seed=2)
        phi = np.array([d.phi for d in draws])
        assert phi.mean() < 0.02

    def test_retained_draw_arithmetic_and_fields(self):
        data = make_zip_community(n_sites=60, seed=12)
        draws = run_chain_zip(data, iterations=200, thin=10, burn=5, seed=0)
        assert len(draws) == 15
        assert draws[0].draw_index == 6
        assert draws[-1].draw_index == 20
        for d in draws:
            assert 0.0 < d.phi < 1.0
            assert d.sigma2 > 0.0

    def test_bit_reproducible(self):
        data = make_zip_community(n_sites=50, seed=13)
        a = run_chain_zip(data, iterations=80, thin=2, burn=5, seed=9)
        b = run_chain_zip(data, iterations=80, thin=2, burn=5, seed=9)
        for da, db in zip(a, b):
            assert np.array_equal(da.alpha, db.alpha)
            assert all(np.array_equal(ga, gb) for ga, gb in zip(da.gammas, db.gammas))
            assert da.phi == db.phi and da.sigma2 == db.sigma2
            assert [t.groups for t in da.trees] == [t.groups for t in db.trees]

    def test_invariants_hold_every_sweep(self):
        data = make_zip_community(n_sites=50, seed=14)
        run_chain_zip(data, iterations=60, seed=3, check_invariants=True)

    def test_rejects_invalid_counts(self):
        data = tiny_data([[0.0, -1.0], [2.0, 1.0]], [[0.1], [0.2]], family="zip")
        with pytest.raises(ValueError, match="nonnegative"):
            run_chain_zip(data, iterations=10)
        data = tiny_data([[0.0, 1.5], [2.0, 1.0]], [[0.1], [0.2]], family="zip")
        with pytest.raises(ValueError, match="nonnegative integers"):
            run_chain_zip(data, iterations=10)
