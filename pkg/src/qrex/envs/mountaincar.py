"""Mountain car with per-action tile coding, compiled for episode rollouts."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from qrex.errors import ConfigurationError
from qrex.mdp import BehaviorPolicy, Environment, FeatureMap, Trajectory, TransitionSample

X_MIN, X_MAX = -1.2, 0.5
V_MIN, V_MAX = -0.07, 0.07
FORCES = (-1, 0, 1)


@njit(cache=True)
def _dynamics(x, v, a):
    v = v + 0.001 * (a - 1) - 0.0025 * math.cos(3.0 * x)
    v = min(max(v, V_MIN), V_MAX)
    x = min(max(x + v, X_MIN), X_MAX)
    if x <= X_MIN:
        v = 0.0
    return x, v, x >= X_MAX


@njit(cache=True)
def _tiles(x, v, a, n_tilings, tiles, out):
    wx = (X_MAX - X_MIN) / tiles
    wv = (V_MAX - V_MIN) / tiles
    per_tiling = tiles * tiles
    for m in range(n_tilings):
        off = m / n_tilings
        tx = min(max(int(math.floor((x - X_MIN) / wx + off)), 0), tiles - 1)
        tv = min(max(int(math.floor((v - V_MIN) / wv + off)), 0), tiles - 1)
        out[m] = a * n_tilings * per_tiling + m * per_tiling + tx * tiles + tv


@njit(cache=True)
def _tiles_batch(xv, actions, n_tilings, tiles, out):
    for i in range(xv.shape[0]):
        _tiles(xv[i, 0], xv[i, 1], actions[i], n_tilings, tiles, out[i])


@njit(cache=True)
def _tiles_all_actions(xv, n_tilings, tiles, out):
    for i in range(xv.shape[0]):
        for a in range(3):
            _tiles(xv[i, 0], xv[i, 1], a, n_tilings, tiles, out[i, a])


@njit(cache=True)
def _episode(w, greedy, x, v, cap, u_act, n_tilings, tiles, xs, vs, acts, nxs, nvs):
    idx = np.empty(n_tilings, np.int64)
    for t in range(cap):
        if greedy:
            a = 0
            best = -np.inf
            for b in range(3):
                _tiles(x, v, b, n_tilings, tiles, idx)
                q = 0.0
                for m in range(n_tilings):
                    q += w[idx[m]]
                if q > best:
                    best = q
                    a = b
        else:
            a = min(int(u_act[t] * 3), 2)
        xs[t] = x
        vs[t] = v
        acts[t] = a
        x, v, done = _dynamics(x, v, a)
        nxs[t] = x
        nvs[t] = v
        if done:
            return t + 1, True
    return cap, False


class TileCoding(FeatureMap):
    """``n_tilings`` offset ``tiles x tiles`` grids over (position, velocity), one block per action."""

    num_actions = 3

    def __init__(self, n_tilings: int = 4, tiles: int = 4):
        if n_tilings < 1 or tiles < 1:
            raise ConfigurationError("tile coding needs n_tilings >= 1 and tiles >= 1")
        self.n_tilings = n_tilings
        self.tiles = tiles
        self.nnz = n_tilings
        self.dim = n_tilings * tiles * tiles * self.num_actions

    def sparse(self, states, actions):
        xv = np.ascontiguousarray(np.asarray(states, dtype=float).reshape(-1, 2))
        idx = np.empty((len(xv), self.n_tilings), dtype=np.int64)
        _tiles_batch(xv, np.asarray(actions, dtype=np.int64), self.n_tilings, self.tiles, idx)
        return idx, np.ones(idx.shape)

    def sparse_all_actions(self, states):
        xv = np.ascontiguousarray(np.asarray(states, dtype=float).reshape(-1, 2))
        idx = np.empty((len(xv), self.num_actions, self.n_tilings), dtype=np.int64)
        _tiles_all_actions(xv, self.n_tilings, self.tiles, idx)
        return idx, np.ones(idx.shape)

    def params(self):
        return {"dim": self.dim, "n_tilings": self.n_tilings, "tiles": self.tiles}


class MountainCarEnv(Environment):
    """Reward -1 per step until the car reaches ``x >= 0.5``; starts at rest in ``[-0.6, -0.4)``.

    Action indices 0, 1, 2 push with force -1, 0, +1.
    """

    episodic = True

    def __init__(self, n_tilings: int = 4, tiles: int = 4, gamma: float = 1.0):
        self.features = TileCoding(n_tilings, tiles)
        self.gamma = gamma

    def params(self):
        return {"env": "mountaincar", "gamma": self.gamma, **self.features.params()}

    def reset(self, rng):
        return (float(rng.uniform(-0.6, -0.4)), 0.0)

    def step(self, state, action, rng=None):
        self._check_action(action)
        x, v = state
        x2, v2, done = _dynamics(float(x), float(v), int(action))
        return TransitionSample((float(x), float(v)), int(action), -1.0, (x2, v2), bool(done))

    def episode(self, policy: BehaviorPolicy, cap: int, rng):
        x, v = self.reset(rng)
        greedy = policy.kind == "greedy"
        if policy.kind == "table":
            raise ConfigurationError("mountain car has a continuous state space; use uniform or greedy")
        w = np.asarray(policy.weights if greedy else np.zeros(self.features.dim), dtype=float)
        u_act = np.empty(0) if greedy else rng.random(cap)
        xs, vs, nxs, nvs = (np.empty(cap) for _ in range(4))
        acts = np.empty(cap, np.int64)
        n, done = _episode(w, greedy, x, v, cap, u_act, self.features.n_tilings, self.features.tiles,
                           xs, vs, acts, nxs, nvs)
        nterm = np.zeros(n, dtype=bool)
        nterm[n - 1] = done
        traj = Trajectory(np.stack([xs[:n], vs[:n]], axis=1), acts[:n], np.full(n, -1.0),
                          np.stack([nxs[:n], nvs[:n]], axis=1), nterm)
        traj.truncated = not done
        return traj

    def rollout(self, policy, length, rng, start=None):
        parts, total = [], 0
        while total < length:
            ep = self.episode(policy, length - total, rng)
            parts.append(ep)
            total += len(ep)
        return Trajectory.concat(parts)

    def eval_pairs(self, grid: int = 64):
        xs = np.linspace(X_MIN, X_MAX, grid)
        vs = np.linspace(V_MIN, V_MAX, grid)
        X, V = np.meshgrid(xs, vs, indexing="ij")
        pts = np.stack([X.ravel(), V.ravel()], axis=1)
        states = np.repeat(pts, 3, axis=0)
        actions = np.tile(np.arange(3), len(pts))
        return states, actions
