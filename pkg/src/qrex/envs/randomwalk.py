"""Episodic random walk on a line with state aggregation features."""

from __future__ import annotations

import numpy as np

from qrex.errors import ConfigurationError
from qrex.mdp import FeatureMap, TabularEnv, TabularModel

LEFT, RIGHT = 0, 1


class AggregationFeatures(FeatureMap):
    """One-hot over ``(group, action)``; interior state ``s`` (1-based) is in group ``(s-1) // size``."""

    nnz = 1
    num_actions = 2

    def __init__(self, num_states: int = 100, num_groups: int = 10):
        if num_states % num_groups:
            raise ConfigurationError("num_states must be a multiple of num_groups")
        self.num_states = num_states
        self.num_groups = num_groups
        self.group_size = num_states // num_groups
        self.dim = num_groups * self.num_actions

    def group(self, states: np.ndarray) -> np.ndarray:
        # terminal handles 0 and num_states+1 are clamped; they are never embedded by the learners
        g = (np.asarray(states, dtype=np.int64) - 1) // self.group_size
        return np.clip(g, 0, self.num_groups - 1)

    def sparse(self, states, actions):
        idx = self.group(states) * self.num_actions + np.asarray(actions, dtype=np.int64)
        return idx[:, None], np.ones((len(idx), 1))

    def params(self):
        return {"dim": self.dim, "num_groups": self.num_groups}


def randomwalk_model(num_states: int = 100, gamma: float = 1.0) -> TabularModel:
    """States ``0..n+1``; ``0`` and ``n+1`` absorb with zero reward; entering ``n+1`` pays 1."""
    S = num_states + 2
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    for s in range(S):
        if s in (0, S - 1):
            P[s, :, s] = 1.0
            continue
        P[s, LEFT, s - 1] = 1.0
        P[s, RIGHT, s + 1] = 1.0
        if s + 1 == S - 1:
            R[s, RIGHT] = 1.0
    return TabularModel(P, R, gamma)


def make_randomwalk(num_states: int = 100, num_groups: int = 10, gamma: float = 1.0) -> TabularEnv:
    model = randomwalk_model(num_states, gamma)
    start = np.ones(model.num_states)
    start[[0, -1]] = 0.0
    return TabularEnv(
        model,
        features=AggregationFeatures(num_states, num_groups),
        start_dist=start,
        terminal_states=(0, num_states + 1),
        name="randomwalk",
    )
