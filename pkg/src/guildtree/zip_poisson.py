"""Metropolis-within-Gibbs sampler for zero-inflated Poisson abundance.

Counts arise either from a structural zero (probability phi) or from a
Poisson whose log rate is a latent Gaussian score with mean alpha_j +
x_i . gamma and variance sigma2.  Latent scores at observed-process cells
are updated by per-cell random-walk Metropolis steps whose scales adapt
toward a 0.44 acceptance rate during warmup and are frozen afterwards.
Guild trees and coefficients vary by sampling period; intercepts, the
mixture probability, and the process variance are shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from guildtree.core import (
    Coefficients,
    CommunityData,
    GuildTree,
    PosteriorDraw,
    single_guild_tree,
)
from guildtree.learner import LearnerConfig
from guildtree.updates import update_gamma_period, update_trees

__all__ = [
    "ZipPriors",
    "MetropolisTuner",
    "ZipState",
    "init_zip_state",
    "linear_predictor_zip",
    "update_inflation_indicators",
    "phi_posterior_params",
    "update_phi",
    "update_latent_z",
    "sigma2_posterior_params",
    "update_sigma2",
    "gibbs_step_zip",
    "run_chain_zip",
]


@dataclass(frozen=True)
class ZipPriors:
    """Conjugate prior settings.

    Intercepts are nearly flat (variance 1000) because the latent scale is
    set by sigma2 rather than fixed at 1; phi gets a Beta(1, 1) prior and
    sigma2 an inverse-gamma whose shape keeps the prior mean finite.
    """

    alpha_var: float = 1000.0
    gamma_var: float = 10.0
    phi_a: float = 1.0
    phi_b: float = 1.0
    sigma2_shape: float = 2.01
    sigma2_scale: float = 1.0

    def __post_init__(self):
        if min(self.alpha_var, self.gamma_var) <= 0:
            raise ValueError("prior variances must be positive")
        if min(self.phi_a, self.phi_b) <= 0:
            raise ValueError("Beta prior parameters must be positive")
        if min(self.sigma2_shape, self.sigma2_scale) <= 0:
            raise ValueError("inverse-gamma parameters must be positive")


@dataclass
class MetropolisTuner:
    """Per-cell random-walk scales with batched adaptation.

    Every ``batch_size`` sweeps each cell's log scale moves by
    min(0.05, 1/sqrt(batch)) toward the 0.44 acceptance target; calls with
    ``adapt=False`` keep counting but leave the scales untouched, so the
    retained portion of the chain runs with frozen proposals.
    """

    log_sd: np.ndarray
    accepted: np.ndarray
    attempted: np.ndarray
    batch: int = 0
    sweeps_in_batch: int = 0
    batch_size: int = 50
    target: float = 0.44

    @classmethod
    def for_shape(cls, shape: tuple[int, int], init_sd: float = 0.5) -> "MetropolisTuner":
        return cls(
            log_sd=np.full(shape, np.log(init_sd)),
            accepted=np.zeros(shape, dtype=np.int64),
            attempted=np.zeros(shape, dtype=np.int64),
        )

    def record(self, accepted: np.ndarray, attempted: np.ndarray, adapt: bool) -> None:
        self.accepted += accepted
        self.attempted += attempted
        self.sweeps_in_batch += 1
        if self.sweeps_in_batch < self.batch_size:
            return
        self.batch += 1
        if adapt:
            delta = min(0.05, 1.0 / np.sqrt(self.batch))
            rate = self.accepted / np.maximum(self.attempted, 1)
            tried = self.attempted > 0
            self.log_sd += delta * (tried & (rate > self.target))
            self.log_sd -= delta * (tried & (rate <= self.target))
        self.accepted[:] = 0
        self.attempted[:] = 0
        self.sweeps_in_batch = 0


@dataclass
class ZipState:
    """Mutable sampler state for one chain."""

    alpha: np.ndarray  # (J,)
    trees: list[GuildTree]
    gammas: list[np.ndarray]
    z: np.ndarray  # (n, J) latent log rates
    w: np.ndarray  # (n, J) structural-zero indicators
    phi: float
    sigma2: float
    tuner: MetropolisTuner


def init_zip_state(data: CommunityData) -> ZipState:
    """Start at single-guild structure with latent scores from the counts."""
    y = data.responses
    z = np.log(y + 0.5)
    n_periods = data.n_periods
    return ZipState(
        alpha=z.mean(axis=0),
        trees=[single_guild_tree(data.n_species) for _ in range(n_periods)],
        gammas=[np.zeros((1, data.n_predictors)) for _ in range(n_periods)],
        z=z,
        w=np.zeros(y.shape, dtype=np.int64),
        phi=0.5,
        sigma2=1.0,
        tuner=MetropolisTuner.for_shape(y.shape),
    )


def linear_predictor_zip(data: CommunityData, state: ZipState) -> np.ndarray:
    """Latent mean matrix alpha_j + x_i . gamma of species j's guild."""
    mu = np.broadcast_to(state.alpha, state.z.shape).copy()
    for t, sites in enumerate(data.period_sites()):
        contrib = data.predictors[sites] @ state.gammas[t].T
        mu[sites] += contrib[:, state.trees[t].guild_of]
    return mu


def update_inflation_indicators(
    y: np.ndarray, z: np.ndarray, phi: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw structural-zero indicators.

    Positive counts force w = 0; at observed zeros the posterior odds of a
    structural zero are phi : (1 - phi) exp(-e^z).
    """
    with np.errstate(over="ignore"):
        p_pois_zero = np.exp(-np.exp(z))
    denom = phi + (1.0 - phi) * p_pois_zero
    prob = np.divide(phi, denom, out=np.ones_like(denom), where=denom > 0)
    u = rng.random(y.shape)
    return ((y == 0) & (u < prob)).astype(np.int64)


def phi_posterior_params(w: np.ndarray, priors: ZipPriors | None = None) -> tuple[float, float]:
    """Beta posterior parameters for the structural-zero probability."""
    priors = priors or ZipPriors()
    total = w.size
    ones = float(w.sum())
    return priors.phi_a + ones, priors.phi_b + (total - ones)


def update_phi(
    w: np.ndarray, rng: np.random.Generator, priors: ZipPriors | None = None
) -> float:
    a, b = phi_posterior_params(w, priors)
    return float(rng.beta(a, b))


def update_latent_z(
    state: ZipState,
    y: np.ndarray,
    mu: np.ndarray,
    rng: np.random.Generator,
    adapt: bool,
    loglik=None,
) -> None:
    """Redraw every latent score, updating ``state.z`` and the tuner.

    Structural-zero cells have no data and are drawn exactly from the
    N(mu, sigma2) prior; the rest take one random-walk Metropolis step on
    N(z | mu, sigma2) Pois(y | e^z).  The random stream is consumed in a
    fixed per-cell pattern regardless of the indicator layout, so chains
    are reproducible cell-for-cell.  ``loglik(z, y)`` overrides the Poisson
    log likelihood, letting tests target a distribution with a closed form.
    """
    shape = state.z.shape
    exact = rng.standard_normal(shape)
    step = rng.standard_normal(shape)
    log_u = np.log(rng.random(shape))

    sd = np.sqrt(state.sigma2)
    observed = state.w == 0
    prop = state.z + np.exp(state.tuner.log_sd) * step

    if loglik is None:
        def loglik(zz, yy):
            with np.errstate(over="ignore"):
                return yy * zz - np.exp(zz)

    def log_target(zz):
        return -0.5 * (zz - mu) ** 2 / state.sigma2 + loglik(zz, y)

    with np.errstate(invalid="ignore"):
        log_ratio = log_target(prop) - log_target(state.z)
    accept = observed & (log_u < log_ratio)

    z_new = np.where(observed, state.z, mu + sd * exact)
    state.z = np.where(accept, prop, z_new)
    state.tuner.record(accept.astype(np.int64), observed.astype(np.int64), adapt)


def sigma2_posterior_params(
    z: np.ndarray, mu: np.ndarray, priors: ZipPriors | None = None
) -> tuple[float, float]:
    """Inverse-gamma posterior (shape, scale) for the latent variance."""
    priors = priors or ZipPriors()
    resid = z - mu
    return (
        priors.sigma2_shape + z.size / 2.0,
        priors.sigma2_scale + 0.5 * float(np.sum(resid * resid)),
    )


def update_sigma2(
    z: np.ndarray,
    mu: np.ndarray,
    rng: np.random.Generator,
    priors: ZipPriors | None = None,
) -> float:
    shape, scale = sigma2_posterior_params(z, mu, priors)
    return float(scale / rng.gamma(shape, 1.0))


def gibbs_step_zip(
    state: ZipState,
    data: CommunityData,
    priors: ZipPriors,
    learner: LearnerConfig | list[LearnerConfig],
    rng: np.random.Generator,
    adapt: bool,
    fixed_partitions: list[tuple[tuple[int, ...], ...]] | None = None,
) -> list[str]:
    """One full sweep, updating ``state`` in place; returns warnings.

    Order: indicators, mixture probability, latent scores, latent variance,
    then per period the guild tree and coefficients, then intercepts.  The
    variance update conditions on the scores and the sweep-entry mean,
    which the scores' own update also used.
    """
    y = data.responses
    mu = linear_predictor_zip(data, state)

    state.w = update_inflation_indicators(y, state.z, state.phi, rng)
    state.phi = update_phi(state.w, rng, priors)
    update_latent_z(state, y, mu, rng, adapt)
    if not np.all(np.isfinite(state.z)):
        bad = np.argwhere(~np.isfinite(state.z))[0]
        raise FloatingPointError(
            f"non-finite latent score at site {bad[0]}, species "
            f"{data.species_names[bad[1]]!r}"
        )
    state.sigma2 = update_sigma2(state.z, mu, rng, priors)

    period_sites = data.period_sites()
    resid_alpha = state.z - state.alpha

    notes = update_trees(
        state, data, resid_alpha, period_sites, learner, fixed_partitions
    )

    state.gammas = [
        update_gamma_period(
            data.predictors[sites],
            resid_alpha[sites],
            state.trees[t],
            priors.gamma_var,
            rng,
            noise_var=state.sigma2,
        )
        for t, sites in enumerate(period_sites)
    ]

    resid = state.z.copy()
    for t, sites in enumerate(period_sites):
        contrib = data.predictors[sites] @ state.gammas[t].T
        resid[sites] -= contrib[:, state.trees[t].guild_of]
    prec = data.n_sites / state.sigma2 + 1.0 / priors.alpha_var
    mean = resid.sum(axis=0) / state.sigma2 / prec
    state.alpha = mean + rng.standard_normal(data.n_species) / np.sqrt(prec)
    return notes


def _retained_draw(state: ZipState, draw_index: int) -> PosteriorDraw:
    return PosteriorDraw(
        coefficients=Coefficients(
            alpha=state.alpha.copy(),
            gammas=tuple(g.copy() for g in state.gammas),
        ),
        trees=tuple(state.trees),
        draw_index=draw_index,
        phi=state.phi,
        sigma2=state.sigma2,
    )


def run_chain_zip(
    data: CommunityData,
    iterations: int,
    thin: int = 1,
    burn: int = 0,
    priors: ZipPriors | None = None,
    learner: LearnerConfig | list[LearnerConfig] | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    fixed_partitions: list[tuple[tuple[int, ...], ...]] | None = None,
    state: ZipState | None = None,
    start_iteration: int = 0,
    on_draw=None,
    check_invariants: bool = False,
    warn_sink: list[str] | None = None,
) -> list[PosteriorDraw]:
    """Run one chain and return the retained draws.

    Thinning and burn-in follow the same convention as the probit chain.
    Proposal scales adapt during the first burn * thin sweeps and are
    frozen afterwards; ``start_iteration`` keeps that window aligned when
    continuing a checkpointed chain.
    """
    data.validate_for("zip")
    if iterations < 1 or thin < 1 or burn < 0:
        raise ValueError("iterations and thin must be >= 1 and burn >= 0")
    if iterations // thin <= burn:
        raise ValueError(
            f"{iterations} iterations at thinning {thin} leave no draws after "
            f"discarding {burn}"
        )
    priors = priors or ZipPriors()
    learner = learner if learner is not None else LearnerConfig(alpha=0.01)
    rng = rng or np.random.default_rng(seed)
    state = state or init_zip_state(data)
    adapt_until = burn * thin
    draws: list[PosteriorDraw] = []
    for i in range(start_iteration + 1, iterations + 1):
        try:
            notes = gibbs_step_zip(
                state, data, priors, learner, rng, adapt=i <= adapt_until,
                fixed_partitions=fixed_partitions,
            )
        except Exception as exc:
            raise RuntimeError(f"sweep {i} failed: {exc}") from exc
        if warn_sink is not None and notes:
            warn_sink.extend(f"sweep {i}: {note}" for note in notes)
        if check_invariants:
            assert np.all(state.w[data.responses > 0] == 0), (
                f"structural-zero indicator violated at sweep {i}"
            )
        if i % thin == 0 and i // thin > burn:
            draw = _retained_draw(state, i // thin)
            draws.append(draw)
            if on_draw is not None:
                on_draw(draw)
    return draws
