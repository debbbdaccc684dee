"""Linear dynamical system ``X' = A X + noise`` with linear rewards ``<X, theta>``."""

from __future__ import annotations

import numpy as np
from numba import njit

from qrex.errors import ConfigurationError
from qrex.mdp import Environment, FeatureMap, Trajectory, TransitionSample
from qrex.oracle import lds_closed_form


class IdentityFeatures(FeatureMap):
    """``phi(X) = X`` for the single action."""

    num_actions = 1

    def __init__(self, dim: int):
        self.dim = dim
        self.nnz = dim

    def sparse(self, states, actions):
        X = np.asarray(states, dtype=float).reshape(-1, self.dim)
        return np.broadcast_to(np.arange(self.dim), X.shape).copy(), X.copy()


@njit(cache=True)
def _simulate(A, theta, x, noise, xs, rewards, nxs):
    for t in range(noise.shape[0]):
        xs[t] = x
        rewards[t] = x @ theta
        x = A @ x + noise[t]
        nxs[t] = x


def random_system(dim: int, rho: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric Gaussian matrix rescaled to spectral radius ``rho``, and a unit ``theta``."""
    G = rng.standard_normal((dim, dim))
    A = (G + G.T) / 2.0
    A *= rho / np.max(np.abs(np.linalg.eigvalsh(A)))
    theta = rng.standard_normal(dim)
    return A, theta / np.linalg.norm(theta)


class LdsEnv(Environment):
    """Continuing LDS started at ``X_0 = 0`` with Gaussian process noise of scale ``sigma``.

    ``A`` and ``theta`` come from ``system_seed`` so that every run of an
    experiment shares the same system.
    """

    def __init__(self, dim: int = 5, rho: float = 0.9, sigma: float = 0.1, gamma: float = 0.99,
                 system_seed: int = 0, A: np.ndarray | None = None, theta: np.ndarray | None = None):
        if not 0 <= rho < 1:
            raise ConfigurationError(f"rho must lie in [0, 1), got {rho}")
        self.dim, self.rho, self.sigma, self.gamma, self.system_seed = dim, rho, sigma, gamma, system_seed
        if A is None or theta is None:
            A, theta = random_system(dim, rho, np.random.default_rng(system_seed))
        self.A = np.ascontiguousarray(A, dtype=float)
        self.theta = np.ascontiguousarray(theta, dtype=float)
        self.features = IdentityFeatures(dim)

    def params(self):
        return {"env": "lds", "dim": self.dim, "rho": self.rho, "sigma": self.sigma,
                "gamma": self.gamma, "system_seed": self.system_seed}

    @property
    def optimal_weights(self) -> np.ndarray:
        return lds_closed_form(self.A, self.theta, self.gamma)

    def reset(self, rng):
        return tuple(np.zeros(self.dim))

    def step(self, state, action, rng):
        self._check_action(action)
        x = np.asarray(state, dtype=float)
        x2 = self.A @ x + self.sigma * rng.standard_normal(self.dim)
        return TransitionSample(tuple(x), 0, float(x @ self.theta), tuple(x2), False)

    def rollout(self, policy, length, rng, start=None):
        x = np.zeros(self.dim) if start is None else np.asarray(start, dtype=float)
        noise = self.sigma * rng.standard_normal((length, self.dim))
        xs, nxs = np.empty((length, self.dim)), np.empty((length, self.dim))
        rewards = np.empty(length)
        _simulate(self.A, self.theta, x.copy(), noise, xs, rewards, nxs)
        return Trajectory(xs, np.zeros(length, np.int64), rewards, nxs, np.zeros(length, bool))
