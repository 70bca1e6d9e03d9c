"""Shared fixtures and small data builders."""

import numpy as np
import pytest

from guildtree.core import CommunityData
from guildtree.simulate import SimSpec, simulate


def make_probit_community(
    n_sites=100,
    n_species=4,
    groups=((0, 1), (2, 3)),
    gammas=((-1.0,), (1.0,)),
    alpha=None,
    seed=0,
    holdout_fraction=0.0,
):
    """One-period probit community with a known two-or-more-guild structure."""
    alpha = alpha if alpha is not None else (0.0,) * n_species
    spec = SimSpec(
        n_sites=n_sites,
        n_species=n_species,
        n_predictors=len(gammas[0]),
        family="probit",
        groups=(tuple(tuple(g) for g in groups),),
        alpha=tuple(alpha),
        gammas=(np.asarray(gammas, dtype=float),),
        holdout_fraction=holdout_fraction,
    )
    return simulate(spec, seed=seed).data


def tiny_data(y, x, family="probit", species=None, period=None):
    """Wrap explicit arrays into CommunityData with generated names."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    j = y.shape[1]
    k = x.shape[1]
    names = species or tuple(f"sp{i + 1:02d}" for i in range(j))
    return CommunityData(
        responses=y,
        predictors=x,
        species_names=names,
        predictor_names=tuple(f"x{i + 1}" for i in range(k)),
        period_index=None if period is None else np.asarray(period),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
