"""Core MDP abstractions: transitions, feature maps, tabular models, policies and environments."""

from __future__ import annotations

import abc
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, overload

import numpy as np
from numba import njit

from qrex.errors import ConfigurationError

ROW_TOL = 1e-12


@dataclass(frozen=True)
class TransitionSample:
    """One observed ``(s, a, r, s', terminal)`` tuple."""

    state: Any
    action: int
    reward: float
    next_state: Any
    next_terminal: bool = False


def _handle(value: np.ndarray) -> Any:
    if np.ndim(value) == 0:
        return int(value) if np.issubdtype(np.asarray(value).dtype, np.integer) else float(value)
    return tuple(float(v) for v in value)


@dataclass
class Trajectory(Sequence):
    """A run of transitions stored column-wise.

    Behaves as a sequence of :class:`TransitionSample`; the arrays are what the
    learners consume.  ``truncated`` is set on episodes cut off by a step cap.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_terminal: np.ndarray
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    @overload
    def __getitem__(self, i: int) -> TransitionSample: ...

    @overload
    def __getitem__(self, i: slice) -> "Trajectory": ...

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trajectory(
                self.states[i],
                self.actions[i],
                self.rewards[i],
                self.next_states[i],
                self.next_terminal[i],
                self.truncated,
            )
        return TransitionSample(
            _handle(self.states[i]),
            int(self.actions[i]),
            float(self.rewards[i]),
            _handle(self.next_states[i]),
            bool(self.next_terminal[i]),
        )

    def __iter__(self) -> Iterator[TransitionSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def last_state(self) -> Any:
        """State to continue the chain from, or ``None`` if the last step terminated."""
        if len(self) == 0 or self.next_terminal[-1]:
            return None
        return self.next_states[-1]

    @classmethod
    def from_samples(cls, samples: Sequence[TransitionSample]) -> "Trajectory":
        if len(samples) == 0:
            raise ConfigurationError("cannot build a trajectory from zero samples")
        return cls(
            np.array([s.state for s in samples]),
            np.array([s.action for s in samples], dtype=np.int64),
            np.array([s.reward for s in samples], dtype=float),
            np.array([s.next_state for s in samples]),
            np.array([s.next_terminal for s in samples], dtype=bool),
        )

    @classmethod
    def concat(cls, parts: Sequence["Trajectory"]) -> "Trajectory":
        return cls(
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.actions for p in parts]),
            np.concatenate([p.rewards for p in parts]),
            np.concatenate([p.next_states for p in parts]),
            np.concatenate([p.next_terminal for p in parts]),
            parts[-1].truncated if parts else False,
        )


# ---------------------------------------------------------------------------
# Feature maps


class FeatureMap(abc.ABC):
    """Sparse embedding ``phi(s, a)`` with a fixed number of stored entries.

    Subclasses implement :meth:`sparse` on batches; every other method is
    derived from it.  ``nnz`` is the number of (index, value) slots per pair,
    padded entries use value 0.
    """

    dim: int
    num_actions: int
    nnz: int

    @abc.abstractmethod
    def sparse(self, states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched embedding: returns ``(idx, val)`` of shape ``(n, nnz)``."""

    def embed(self, state: Any, action: int) -> np.ndarray:
        idx, val = self.sparse(np.asarray([state]), np.asarray([action], dtype=np.int64))
        out = np.zeros(self.dim)
        np.add.at(out, idx[0], val[0])
        return out

    def sparse_all_actions(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Embeddings of every action at each state, shape ``(n, A, nnz)``."""
        states = np.asarray(states)
        n = len(states)
        idx = np.empty((n, self.num_actions, self.nnz), dtype=np.int64)
        val = np.empty((n, self.num_actions, self.nnz))
        for a in range(self.num_actions):
            idx[:, a], val[:, a] = self.sparse(states, np.full(n, a, dtype=np.int64))
        return idx, val

    def q_values(self, w: np.ndarray, state: Any) -> np.ndarray:
        idx, val = self.sparse_all_actions(np.asarray([state]))
        return (w[idx[0]] * val[0]).sum(axis=-1)

    def params(self) -> dict:
        return {"dim": self.dim, "num_actions": self.num_actions}


class TabularFeatures(FeatureMap):
    """One-hot embedding ``e_(s,a)`` at index ``s * A + a``."""

    nnz = 1

    def __init__(self, num_states: int, num_actions: int):
        self.num_states = num_states
        self.num_actions = num_actions
        self.dim = num_states * num_actions

    def index(self, state: int, action: int) -> int:
        return int(state) * self.num_actions + int(action)

    def sparse(self, states, actions):
        idx = (np.asarray(states, dtype=np.int64) * self.num_actions + np.asarray(actions, dtype=np.int64))
        return idx[:, None], np.ones((len(idx), 1))

    def table(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w).reshape(self.num_states, self.num_actions)


def q_value(w: np.ndarray, phi: np.ndarray) -> float:
    """Linear Q estimate ``<phi, w>``."""
    w = np.asarray(w, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if w.shape != phi.shape:
        raise ConfigurationError(f"dimension mismatch: w has shape {w.shape}, phi has shape {phi.shape}")
    return float(phi @ w)


def max_q(w: np.ndarray, fm: FeatureMap, state: Any, terminal: bool = False) -> float:
    """``max_a' <phi(state, a'), w>``, defined as 0 at terminal states."""
    if terminal:
        return 0.0
    return float(fm.q_values(np.asarray(w, dtype=float), state).max())


def greedy_action(w: np.ndarray, fm: FeatureMap, state: Any) -> int:
    # np.argmax returns the first maximiser, i.e. the lowest action index
    return int(np.argmax(fm.q_values(np.asarray(w, dtype=float), state)))


# ---------------------------------------------------------------------------
# Tabular models


@dataclass(frozen=True, eq=False)
class TabularModel:
    """Explicit finite MDP ``(P, R, gamma)`` with ``P`` of shape ``(S, A, S)``."""

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ConfigurationError(f"R must have shape {P.shape[:2]}, got {R.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise ConfigurationError("every row P(.|s,a) must be nonnegative and sum to 1")
        if not np.all(np.isfinite(R)):
            raise ConfigurationError("rewards must be finite")
        # gamma = 1 is allowed for absorbing episodic chains (random walk)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    @classmethod
    def random(
        cls,
        num_states: int,
        num_actions: int,
        gamma: float,
        rng: np.random.Generator,
        *,
        reward_range: tuple[float, float] = (0.0, 1.0),
        deterministic: bool = False,
    ) -> "TabularModel":
        """Dirichlet transition rows (or one-hot rows if ``deterministic``) and uniform rewards."""
        S, A = num_states, num_actions
        if deterministic:
            P = np.zeros((S, A, S))
            nxt = rng.integers(S, size=(S, A))
            P[np.arange(S)[:, None], np.arange(A)[None, :], nxt] = 1.0
        else:
            P = rng.dirichlet(np.ones(S), size=(S, A))
            P /= P.sum(axis=2, keepdims=True)
        R = rng.uniform(*reward_range, size=(S, A))
        return cls(P, R, gamma)

    def save(self, path: str | Path) -> None:
        S, A = self.num_states, self.num_actions
        lines = [f"{S} {A} {self.gamma!r}"]
        for s in range(S):
            for a in range(A):
                probs = " ".join(repr(float(p)) for p in self.P[s, a])
                lines.append(f"{s} {a} {float(self.R[s, a])!r} {probs}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TabularModel":
        """Read the plain-text ``S A gamma`` / ``s a R p_0 ... p_{S-1}`` format."""
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 3:
            raise ConfigurationError(f"{path}: first line must be 'S A gamma'")
        try:
            S, A, gamma = int(rows[0][0]), int(rows[0][1]), float(rows[0][2])
        except ValueError as exc:
            raise ConfigurationError(f"{path}: bad header: {exc}") from None
        if len(rows) - 1 != S * A:
            raise ConfigurationError(f"{path}: expected {S * A} transition lines, found {len(rows) - 1}")
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        seen = np.zeros((S, A), dtype=bool)
        for ln in rows[1:]:
            if len(ln) != 3 + S:
                raise ConfigurationError(f"{path}: line {' '.join(ln)!r} must have {3 + S} fields")
            s, a = int(ln[0]), int(ln[1])
            if not (0 <= s < S and 0 <= a < A) or seen[s, a]:
                raise ConfigurationError(f"{path}: bad or duplicate pair ({s}, {a})")
            seen[s, a] = True
            R[s, a] = float(ln[2])
            P[s, a] = [float(x) for x in ln[3:]]
        return cls(P, R, gamma)


# ---------------------------------------------------------------------------
# Behaviour policies


@dataclass(frozen=True, eq=False)
class BehaviorPolicy:
    """Data-collection policy: ``uniform``, ``greedy`` w.r.t. ``weights``, or a fixed ``table``."""

    kind: str = "uniform"
    weights: np.ndarray | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "greedy", "table"):
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.kind == "greedy" and self.weights is None:
            raise ConfigurationError("greedy policy needs weights")
        if self.kind == "table":
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > ROW_TOL):
                raise ConfigurationError("policy table rows must be distributions")
            object.__setattr__(self, "table", t)

    @classmethod
    def uniform(cls) -> "BehaviorPolicy":
        return cls("uniform")

    @classmethod
    def greedy(cls, w: np.ndarray) -> "BehaviorPolicy":
        return cls("greedy", weights=np.array(w, dtype=float))

    @classmethod
    def from_table(cls, table: np.ndarray) -> "BehaviorPolicy":
        return cls("table", table=table)

    def probabilities(self, state: Any, fm: FeatureMap) -> np.ndarray:
        A = fm.num_actions
        if self.kind == "uniform":
            return np.full(A, 1.0 / A)
        if self.kind == "greedy":
            p = np.zeros(A)
            p[greedy_action(self.weights, fm, state)] = 1.0
            return p
        return self.table[int(state)]

    def state_table(self, num_states: int, fm: FeatureMap) -> np.ndarray:
        """Per-state action distribution for a finite state space ``0..S-1``."""
        if self.kind == "table":
            if self.table.shape != (num_states, fm.num_actions):
                raise ConfigurationError(f"policy table must have shape {(num_states, fm.num_actions)}")
            return self.table
        if self.kind == "uniform":
            return np.full((num_states, fm.num_actions), 1.0 / fm.num_actions)
        idx, val = fm.sparse_all_actions(np.arange(num_states))
        q = (self.weights[idx] * val).sum(axis=-1)
        out = np.zeros((num_states, fm.num_actions))
        out[np.arange(num_states), np.argmax(q, axis=1)] = 1.0
        return out

    def sample(self, state: Any, fm: FeatureMap, rng: np.random.Generator) -> int:
        p = self.probabilities(state, fm)
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


# ---------------------------------------------------------------------------
# Environments


class Environment(abc.ABC):
    """A sampled MDP with a feature map.

    The generic :meth:`rollout` / :meth:`episode` loop over :meth:`step`;
    concrete environments override them with compiled kernels.
    """

    features: FeatureMap
    episodic: bool = False
    gamma: float = 0.99

    @property
    def num_actions(self) -> int:
        return self.features.num_actions

    @abc.abstractmethod
    def reset(self, rng: np.random.Generator) -> Any: ...

    @abc.abstractmethod
    def step(self, state: Any, action: int, rng: np.random.Generator) -> TransitionSample: ...

    def params(self) -> dict:
        return {}

    def _check_action(self, action: int) -> None:
        if not 0 <= int(action) < self.num_actions:
            raise ConfigurationError(f"invalid action {action} (environment has {self.num_actions})")

    def rollout(
        self, policy: BehaviorPolicy, length: int, rng: np.random.Generator, start: Any = None
    ) -> Trajectory:
        """``length`` chained transitions, resetting after terminal states."""
        samples = []
        state = self.reset(rng) if start is None else start
        for _ in range(length):
            if state is None:
                state = self.reset(rng)
            a = policy.sample(state, self.features, rng)
            tr = self.step(state, a, rng)
            samples.append(tr)
            state = None if tr.next_terminal else tr.next_state
        return Trajectory.from_samples(samples)

    def episode(self, policy: BehaviorPolicy, cap: int, rng: np.random.Generator) -> Trajectory:
        samples = []
        state = self.reset(rng)
        for _ in range(cap):
            a = policy.sample(state, self.features, rng)
            tr = self.step(state, a, rng)
            samples.append(tr)
            if tr.next_terminal:
                break
            state = tr.next_state
        traj = Trajectory.from_samples(samples)
        traj.truncated = not traj.next_terminal[-1]
        return traj

    def eval_pairs(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(states, actions)`` over which sup-norm errors are measured."""
        return None


@njit(cache=True)
def _draw(cum, u):
    i = np.searchsorted(cum, u, side="right")
    return min(i, len(cum) - 1)


@njit(cache=True)
def _tabular_steps(cumP, R, cumpi, terminal, cumstart, s, n, u, noise, stop_at_terminal,
                   states, actions, rewards, nexts, nterm):
    done = 0
    for t in range(n):
        if s < 0:
            s = _draw(cumstart, u[t, 2])
        a = _draw(cumpi[s], u[t, 0])
        s2 = _draw(cumP[s, a], u[t, 1])
        states[t] = s
        actions[t] = a
        rewards[t] = R[s, a] + noise[t]
        nexts[t] = s2
        nterm[t] = terminal[s2]
        done = t + 1
        if terminal[s2]:
            if stop_at_terminal:
                break
            s = -1
        else:
            s = s2
    return done


class TabularEnv(Environment):
    """Sampling wrapper around a :class:`TabularModel`.

    Observed rewards are ``R(s, a) + U[-reward_noise, reward_noise]``.  States
    listed in ``terminal_states`` end episodes; continuing rollouts restart
    from ``start_dist``.
    """

    def __init__(
        self,
        model: TabularModel,
        *,
        features: FeatureMap | None = None,
        reward_noise: float = 0.0,
        start_dist: np.ndarray | None = None,
        terminal_states: Sequence[int] = (),
        name: str = "tabular",
    ):
        self.model = model
        self.gamma = model.gamma
        self.features = features or TabularFeatures(model.num_states, model.num_actions)
        if self.features.num_actions != model.num_actions:
            raise ConfigurationError("feature map and model disagree on the number of actions")
        self.reward_noise = float(reward_noise)
        self.terminal = np.zeros(model.num_states, dtype=bool)
        self.terminal[list(terminal_states)] = True
        self.episodic = bool(self.terminal.any())
        if start_dist is None:
            start_dist = (~self.terminal).astype(float)
        start_dist = np.asarray(start_dist, dtype=float)
        self.start_dist = start_dist / start_dist.sum()
        self.name = name
        self._cumP = np.cumsum(model.P, axis=2)
        self._cumstart = np.cumsum(self.start_dist)

    def params(self) -> dict:
        return {
            "env": self.name,
            "num_states": self.model.num_states,
            "num_actions": self.model.num_actions,
            "reward_noise": self.reward_noise,
            "gamma": self.gamma,
        }

    def reset(self, rng):
        return int(_draw(self._cumstart, rng.random()))

    def step(self, state, action, rng):
        self._check_action(action)
        s, a = int(state), int(action)
        s2 = int(_draw(self._cumP[s, a], rng.random()))
        r = self.model.R[s, a] + (rng.uniform(-self.reward_noise, self.reward_noise) if self.reward_noise else 0.0)
        return TransitionSample(s, a, float(r), s2, bool(self.terminal[s2]))

    def _run(self, policy, n, rng, s, stop_at_terminal):
        cumpi = np.cumsum(policy.state_table(self.model.num_states, self.features), axis=1)
        u = rng.random((n, 3))
        noise = rng.uniform(-self.reward_noise, self.reward_noise, n) if self.reward_noise else np.zeros(n)
        out = (np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n), np.empty(n, np.int64), np.empty(n, bool))
        done = _tabular_steps(self._cumP, self.model.R, cumpi, self.terminal, self._cumstart,
                              s, n, u, noise, stop_at_terminal, *out)
        return Trajectory(*(x[:done] for x in out))

    def rollout(self, policy, length, rng, start=None):
        s = -1 if start is None else int(start)
        return self._run(policy, length, rng, s, False)

    def episode(self, policy, cap, rng, chunk: int = 4096):
        parts = []
        s = self.reset(rng)
        remaining = cap
        while remaining > 0:
            part = self._run(policy, min(chunk, remaining), rng, s, True)
            parts.append(part)
            remaining -= len(part)
            if part.next_terminal[-1]:
                break
            s = int(part.next_states[-1])
        traj = Trajectory.concat(parts)
        traj.truncated = not bool(traj.next_terminal[-1])
        return traj

    def eval_pairs(self):
        live = np.flatnonzero(~self.terminal)
        A = self.model.num_actions
        return np.repeat(live, A), np.tile(np.arange(A), len(live))


def as_environment(model_or_env: TabularModel | Environment) -> Environment:
    if isinstance(model_or_env, TabularModel):
        return TabularEnv(model_or_env)
    return model_or_env


def sample_trajectory(
    model_or_env: TabularModel | Environment,
    policy: BehaviorPolicy,
    length: int,
    rng: np.random.Generator,
) -> Trajectory:
    """A single chained trajectory of exactly ``length`` transitions."""
    if length < 1:
        raise ConfigurationError(f"trajectory length must be >= 1, got {length}")
    return as_environment(model_or_env).rollout(policy, length, rng)


def sample_episode(env: Environment, policy: BehaviorPolicy, cap: int, rng: np.random.Generator) -> Trajectory:
    """One episode, stopped at the first terminal state or after ``cap`` steps."""
    env = as_environment(env)
    if not env.episodic:
        raise ConfigurationError("sample_episode requires an episodic environment")
    if cap < 1:
        raise ConfigurationError(f"episode cap must be >= 1, got {cap}")
    return env.episode(policy, cap, rng)


__all__ = [
    "BehaviorPolicy",
    "Environment",
    "FeatureMap",
    "TabularEnv",
    "TabularFeatures",
    "TabularModel",
    "Trajectory",
    "TransitionSample",
    "greedy_action",
    "max_q",
    "q_value",
    "sample_episode",
    "sample_trajectory",
]
