"""Run configuration: a strict YAML schema echoed verbatim into the manifest.

Unknown keys are rejected at every level so a typo in a config file fails
loudly instead of silently running with a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from guildtree.core import FAMILIES

__all__ = ["ChainConfig", "SimulateConfig", "load_chain_config", "load_simulate_config"]

_PRIOR_DEFAULTS = {
    "probit": {"alpha_var": 1.0, "gamma_var": 10.0},
    "zip": {
        "alpha_var": 1000.0,
        "gamma_var": 10.0,
        "phi_a": 1.0,
        "phi_b": 1.0,
        "sigma2_shape": 2.01,
        "sigma2_scale": 1.0,
    },
}

_LEARNER_DEFAULTS = {"min_node_species": 1, "max_exhaustive_subset": 12, "max_depth": None}
_TREE_PRIOR_DEFAULTS = {"p_split": 0.5, "max_depth": 10}
_PREDICTIVE_DEFAULTS = {"n_z": 32, "z_seed": 0}


def _require_keys(section: dict, allowed, label: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {label} keys: {', '.join(unknown)}")


def _as_paths(value, label: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
        return tuple(value)
    raise ValueError(f"{label} must be a path or list of paths")


def _merged(section, defaults: dict, label: str) -> dict:
    if section is None:
        return dict(defaults)
    if not isinstance(section, dict):
        raise ValueError(f"{label} must be a mapping")
    _require_keys(section, defaults, label)
    out = dict(defaults)
    out.update(section)
    return out


@dataclass(frozen=True)
class ChainConfig:
    """Everything a ``fit`` run needs, validated once at load time."""

    family: str
    data: tuple[str, ...]
    species: tuple[str, ...]
    predictors: tuple[str, ...]
    iterations: int
    thin: int = 1
    burn: int = 0
    seed: int = 0
    alpha: float | tuple[float, ...] = 0.05
    standardize: bool = True
    holdout_file: tuple[str, ...] = ()
    holdout_fraction: float = 0.0
    output_dir: str = "out"
    checkpoint_every: int = 1
    priors: dict = field(default_factory=dict)
    learner: dict = field(default_factory=lambda: dict(_LEARNER_DEFAULTS))
    tree_prior: dict = field(default_factory=lambda: dict(_TREE_PRIOR_DEFAULTS))
    predictive: dict = field(default_factory=lambda: dict(_PREDICTIVE_DEFAULTS))

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.data:
            raise ValueError("data requires at least one path")
        if not self.species:
            raise ValueError("species list is empty")
        if not self.predictors:
            raise ValueError("predictors list is empty")
        if len(set(self.species)) != len(self.species):
            raise ValueError("duplicate species names")
        if len(set(self.predictors)) != len(self.predictors):
            raise ValueError("duplicate predictor names")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.iterations < self.thin:
            raise ValueError("iterations must be at least thin")
        if self.burn < 0:
            raise ValueError("burn must be nonnegative")
        if self.burn >= self.iterations // self.thin:
            raise ValueError(
                "burn must be smaller than the number of thinned draws "
                f"({self.iterations // self.thin})"
            )
        for a in self.alpha_values():
            if not (0.0 <= a <= 1.0) or not math.isfinite(a):
                raise ValueError(f"alpha must be in [0, 1], got {a}")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.holdout_fraction > 0 and self.holdout_file:
            raise ValueError("give holdout_fraction or holdout_file, not both")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative (0 disables)")
        object.__setattr__(
            self, "priors", _merged(self.priors or None, _PRIOR_DEFAULTS[self.family], "priors")
        )

    def alpha_values(self) -> tuple[float, ...]:
        if isinstance(self.alpha, (int, float)):
            return (float(self.alpha),)
        return tuple(float(a) for a in self.alpha)

    @property
    def retained(self) -> int:
        return self.iterations // self.thin - self.burn

    def to_dict(self) -> dict:
        """Full echo, defaults included, for the manifest."""
        return {
            "family": self.family,
            "data": list(self.data),
            "species": list(self.species),
            "predictors": list(self.predictors),
            "iterations": self.iterations,
            "thin": self.thin,
            "burn": self.burn,
            "seed": self.seed,
            "alpha": list(self.alpha_values())
            if isinstance(self.alpha, (list, tuple))
            else float(self.alpha),
            "standardize": self.standardize,
            "holdout_file": list(self.holdout_file),
            "holdout_fraction": self.holdout_fraction,
            "output_dir": self.output_dir,
            "checkpoint_every": self.checkpoint_every,
            "priors": dict(self.priors),
            "learner": dict(self.learner),
            "tree_prior": dict(self.tree_prior),
            "predictive": dict(self.predictive),
        }


_CHAIN_KEYS = {
    "family",
    "data",
    "species",
    "predictors",
    "iterations",
    "thin",
    "burn",
    "seed",
    "alpha",
    "standardize",
    "holdout_file",
    "holdout_fraction",
    "output_dir",
    "checkpoint_every",
    "priors",
    "learner",
    "tree_prior",
    "predictive",
}


def chain_config_from_dict(raw: dict) -> ChainConfig:
    if not isinstance(raw, dict):
        raise ValueError("config must be a mapping")
    _require_keys(raw, _CHAIN_KEYS, "config")
    for key in ("family", "data", "species", "predictors", "iterations"):
        if key not in raw:
            raise ValueError(f"config is missing required key {key!r}")
    alpha = raw.get("alpha", 0.05)
    if isinstance(alpha, list):
        alpha = tuple(float(a) for a in alpha)
    return ChainConfig(
        family=raw["family"],
        data=_as_paths(raw["data"], "data"),
        species=tuple(str(s) for s in raw["species"]),
        predictors=tuple(str(p) for p in raw["predictors"]),
        iterations=int(raw["iterations"]),
        thin=int(raw.get("thin", 1)),
        burn=int(raw.get("burn", 0)),
        seed=int(raw.get("seed", 0)),
        alpha=alpha,
        standardize=bool(raw.get("standardize", True)),
        holdout_file=_as_paths(raw.get("holdout_file"), "holdout_file"),
        holdout_fraction=float(raw.get("holdout_fraction", 0.0)),
        output_dir=str(raw.get("output_dir", "out")),
        checkpoint_every=int(raw.get("checkpoint_every", 1)),
        priors=raw.get("priors") or {},
        learner=_merged(raw.get("learner"), _LEARNER_DEFAULTS, "learner"),
        tree_prior=_merged(raw.get("tree_prior"), _TREE_PRIOR_DEFAULTS, "tree_prior"),
        predictive=_merged(raw.get("predictive"), _PREDICTIVE_DEFAULTS, "predictive"),
    )


def load_chain_config(path) -> ChainConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raise ValueError(f"{path}: config file is empty")
    try:
        return chain_config_from_dict(raw)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Simulation configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulateConfig:
    family: str
    n_sites: int
    n_species: int
    n_predictors: int
    groups: tuple[tuple[tuple[int, ...], ...], ...]
    alpha: tuple[float, ...]
    gammas: tuple
    phi: float = 0.0
    sigma2: float = 1.0
    holdout_fraction: float = 0.0
    seed: int = 0
    output: str = "community.csv"
    truth: str = "truth.json"


_SIM_KEYS = {
    "family",
    "n_sites",
    "n_species",
    "n_predictors",
    "groups",
    "alpha",
    "gammas",
    "phi",
    "sigma2",
    "holdout_fraction",
    "seed",
    "output",
    "truth",
}


def load_simulate_config(path) -> SimulateConfig:
    """Simulation recipe; guild blocks are 0-based species indices."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raise ValueError(f"{path}: config file is empty")
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a mapping")
    _require_keys(raw, _SIM_KEYS, "config")
    for key in ("family", "n_sites", "n_species", "n_predictors", "groups", "alpha", "gammas"):
        if key not in raw:
            raise ValueError(f"{path}: config is missing required key {key!r}")
    groups = tuple(
        tuple(tuple(int(j) for j in block) for block in period) for period in raw["groups"]
    )
    gammas = tuple(
        np_matrix(period, raw["n_predictors"], f"gammas[{t}]")
        for t, period in enumerate(raw["gammas"])
    )
    return SimulateConfig(
        family=raw["family"],
        n_sites=int(raw["n_sites"]),
        n_species=int(raw["n_species"]),
        n_predictors=int(raw["n_predictors"]),
        groups=groups,
        alpha=tuple(float(a) for a in raw["alpha"]),
        gammas=gammas,
        phi=float(raw.get("phi", 0.0)),
        sigma2=float(raw.get("sigma2", 1.0)),
        holdout_fraction=float(raw.get("holdout_fraction", 0.0)),
        seed=int(raw.get("seed", 0)),
        output=str(raw.get("output", "community.csv")),
        truth=str(raw.get("truth", "truth.json")),
    )


def np_matrix(rows, n_cols: int, label: str):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != n_cols:
        raise ValueError(f"{label} must be a matrix with {n_cols} columns")
    return arr
