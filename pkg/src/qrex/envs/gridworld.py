"""5x5 grid world with two teleporting cells and uniform reward noise."""

from __future__ import annotations

import numpy as np

from qrex.mdp import TabularEnv, TabularModel

SIZE = 5
# (row, col) -> (destination, reward)
SPECIAL = {(0, 1): ((4, 1), 10.0), (0, 3): ((2, 3), 5.0)}
MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))  # N, S, E, W
ACTION_NAMES = ("N", "S", "E", "W")


def state_index(row: int, col: int) -> int:
    return row * SIZE + col


def gridworld_model(gamma: float = 0.9) -> TabularModel:
    """Noiseless expected-reward model: 25 states, 4 actions, deterministic moves."""
    S, A = SIZE * SIZE, len(MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for row in range(SIZE):
        for col in range(SIZE):
            s = state_index(row, col)
            for a, (dr, dc) in enumerate(MOVES):
                if (row, col) in SPECIAL:
                    (r2, c2), rew = SPECIAL[(row, col)]
                else:
                    r2, c2 = row + dr, col + dc
                    rew = 0.0
                    if not (0 <= r2 < SIZE and 0 <= c2 < SIZE):
                        r2, c2, rew = row, col, -1.0
                P[s, a, state_index(r2, c2)] = 1.0
                R[s, a] = rew
    return TabularModel(P, R, gamma)


def make_gridworld(gamma: float = 0.9, reward_noise: float = 0.5) -> TabularEnv:
    """Continuing grid world; observed rewards carry ``U[-reward_noise, reward_noise]`` noise."""
    return TabularEnv(gridworld_model(gamma), reward_noise=reward_noise, name="gridworld")
