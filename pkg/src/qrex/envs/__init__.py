"""The benchmark environments and a name-based factory."""

from __future__ import annotations

from typing import Any, Callable

from qrex.envs.baird import BairdEnv, BairdFeatures
from qrex.envs.gridworld import gridworld_model, make_gridworld
from qrex.envs.lds import IdentityFeatures, LdsEnv, random_system
from qrex.envs.mountaincar import MountainCarEnv, TileCoding
from qrex.envs.randomwalk import AggregationFeatures, make_randomwalk, randomwalk_model
from qrex.errors import ConfigurationError
from qrex.mdp import Environment, TabularEnv, TabularModel


def _custom(model_path: str, reward_noise: float = 0.0, gamma: float | None = None) -> TabularEnv:
    model = TabularModel.load(model_path)
    if gamma is not None:
        model = TabularModel(model.P, model.R, gamma)
    return TabularEnv(model, reward_noise=reward_noise, name="custom-tabular")


ENVIRONMENTS: dict[str, Callable[..., Environment]] = {
    "gridworld": make_gridworld,
    "randomwalk": make_randomwalk,
    "mountaincar": MountainCarEnv,
    "baird": BairdEnv,
    "lds": LdsEnv,
    "custom-tabular": _custom,
}


def make_env(name: str, **kwargs: Any) -> Environment:
    try:
        factory = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return factory(**kwargs)


__all__ = [
    "AggregationFeatures", "BairdEnv", "BairdFeatures", "ENVIRONMENTS", "IdentityFeatures", "LdsEnv",
    "MountainCarEnv", "TileCoding", "gridworld_model", "make_env", "make_gridworld", "make_randomwalk",
    "random_system", "randomwalk_model",
]
