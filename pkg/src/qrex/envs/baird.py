"""Baird-style counter-example in R^7 with i.i.d. uniformly sampled states."""

from __future__ import annotations

import numpy as np

from qrex.errors import ConfigurationError
from qrex.mdp import Environment, FeatureMap, Trajectory, TransitionSample

NUM_STATES = 7


EMBEDDINGS = ("shared", "classic")


class BairdFeatures(FeatureMap):
    """States 1..6 map to ``e_i + 2 e_7`` (``shared``, default) or ``2 e_i + e_7`` (``classic``); state 7 maps to ``2 e_7``.

    Under ``shared`` vanilla Q-learning grows transiently before settling;
    under ``classic`` it diverges outright, and so does a frozen target that
    is refreshed every 250 steps at the default step size.
    """

    dim = NUM_STATES
    num_actions = 1
    nnz = 2

    def __init__(self, embedding: str = "shared"):
        if embedding not in EMBEDDINGS:
            raise ConfigurationError(f"unknown Baird embedding {embedding!r}; choose from {EMBEDDINGS}")
        self.embedding = embedding

    def params(self):
        return {"embedding": self.embedding}

    def sparse(self, states, actions):
        s = np.asarray(states, dtype=np.int64)
        if np.any((s < 1) | (s > NUM_STATES)):
            raise ConfigurationError("Baird states are 1..7")
        idx = np.empty((len(s), 2), dtype=np.int64)
        val = np.empty((len(s), 2))
        idx[:, 0] = s - 1
        idx[:, 1] = NUM_STATES - 1
        last = s == NUM_STATES
        own, common = (2.0, 1.0) if self.embedding == "classic" else (1.0, 2.0)
        val[:, 0] = np.where(last, 2.0, own)
        val[:, 1] = np.where(last, 0.0, common)
        return idx, val


class BairdEnv(Environment):
    """Every state moves to state 7 with reward 0, so ``w* = 0``.

    Samples are not chained: each step draws its state uniformly from all
    seven, which is what keeps every coordinate visited.
    """

    def __init__(self, gamma: float = 0.99, embedding: str = "shared"):
        self.features = BairdFeatures(embedding)
        self.gamma = gamma

    def params(self):
        return {"env": "baird", "gamma": self.gamma, "dim": NUM_STATES, "embedding": self.features.embedding}

    def reset(self, rng):
        return int(rng.integers(1, NUM_STATES + 1))

    def step(self, state, action, rng=None):
        self._check_action(action)
        return TransitionSample(int(state), 0, 0.0, NUM_STATES, False)

    def rollout(self, policy, length, rng, start=None):
        states = rng.integers(1, NUM_STATES + 1, size=length).astype(np.int64)
        return Trajectory(states, np.zeros(length, np.int64), np.zeros(length),
                          np.full(length, NUM_STATES, np.int64), np.zeros(length, bool))

    def eval_pairs(self):
        return np.arange(1, NUM_STATES + 1), np.zeros(NUM_STATES, np.int64)

    @property
    def optimal_weights(self) -> np.ndarray:
        return np.zeros(NUM_STATES)
