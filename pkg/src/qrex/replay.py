"""Buffer layout over a sample stream and replay traversal orders."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from qrex.errors import ConfigurationError
from qrex.mdp import Trajectory


class ReplayOrder(str, enum.Enum):
    REVERSE = "reverse"
    FORWARD = "forward"
    RANDOM = "random"


@dataclass(frozen=True)
class BufferPartition:
    """Three-level ``(k, j, i)`` indexing of a stream of ``T = K N (B + u)`` samples.

    All indices are 1-based, matching the usual write-up of the algorithm.
    """

    K: int
    N: int
    B: int
    u: int

    @property
    def S(self) -> int:
        return self.B + self.u

    @property
    def T(self) -> int:
        return self.K * self.N * self.S

    def index(self, k: int, j: int, i: int) -> int:
        if not (1 <= k <= self.K and 1 <= j <= self.N and 1 <= i <= self.S):
            raise ConfigurationError(f"(k, j, i) = ({k}, {j}, {i}) out of range")
        return self.N * self.S * (k - 1) + self.S * (j - 1) + i

    def buffer_slice(self, k: int, j: int) -> slice:
        """0-based slice of the whole ``S``-sample buffer ``(k, j)`` in the stream."""
        start = self.index(k, j, 1) - 1
        return slice(start, start + self.S)

    def used_indices(self) -> np.ndarray:
        return np.array([self.index(k, j, i) for k in range(1, self.K + 1)
                         for j in range(1, self.N + 1) for i in range(1, self.B + 1)], dtype=np.int64)

    def gap_indices(self) -> np.ndarray:
        return np.array([self.index(k, j, i) for k in range(1, self.K + 1)
                         for j in range(1, self.N + 1) for i in range(self.B + 1, self.S + 1)], dtype=np.int64)


def partition_stream(K: int, N: int, B: int, u: int) -> BufferPartition:
    for name, v in (("K", K), ("N", N), ("B", B)):
        if int(v) < 1:
            raise ConfigurationError(f"{name} must be >= 1, got {v}")
    if int(u) < 0:
        raise ConfigurationError(f"u must be >= 0, got {u}")
    return BufferPartition(int(K), int(N), int(B), int(u))


@dataclass(frozen=True)
class Buffer:
    """``S`` consecutive samples of which the first ``B`` are replayed.

    Every stored transition carries its own next state, so position ``B``
    bootstraps from the first gap sample's state (or, with ``u = 0``, from the
    next buffer's first state) without reading any gap transition.
    """

    samples: Trajectory
    B: int
    origin: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if not 1 <= self.B <= len(self.samples):
            raise ConfigurationError(f"buffer of {len(self.samples)} samples cannot replay B={self.B}")

    @property
    def transitions(self) -> Trajectory:
        return self.samples[: self.B]


def iteration_order(B: int, order: ReplayOrder | str, rng: np.random.Generator | None = None) -> np.ndarray:
    """1-based buffer positions in the order they are replayed."""
    if B < 1:
        raise ConfigurationError(f"B must be >= 1, got {B}")
    order = ReplayOrder(order)
    if order is ReplayOrder.REVERSE:
        return np.arange(B, 0, -1, dtype=np.int64)
    if order is ReplayOrder.FORWARD:
        return np.arange(1, B + 1, dtype=np.int64)
    if rng is None:
        raise ConfigurationError("random replay order needs an rng")
    return rng.permutation(B).astype(np.int64) + 1


def sample_with_replacement(B: int, rng: np.random.Generator) -> np.ndarray:
    """Classical experience-replay draw: ``B`` positions i.i.d. uniform on ``1..B``."""
    return rng.integers(1, B + 1, size=B).astype(np.int64)
