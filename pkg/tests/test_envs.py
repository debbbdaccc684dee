import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrex.envs import (
    BairdEnv,
    BairdFeatures,
    LdsEnv,
    MountainCarEnv,
    TileCoding,
    gridworld_model,
    make_env,
    make_gridworld,
    make_randomwalk,
)
from qrex.envs.gridworld import state_index
from qrex.envs.mountaincar import V_MAX, V_MIN, X_MAX, X_MIN
from qrex.errors import ConfigurationError
from qrex.mdp import BehaviorPolicy, Trajectory

UNIFORM = BehaviorPolicy.uniform()


# GridWorld


def test_gridworld_structure():
    env = make_gridworld()
    m = env.model
    assert (m.num_states, m.num_actions) == (25, 4)
    assert not env.episodic
    a, a_prime = state_index(0, 1), state_index(4, 1)
    b, b_prime = state_index(0, 3), state_index(2, 3)
    for act in range(4):
        assert m.P[a, act, a_prime] == 1.0 and m.R[a, act] == 10.0
        assert m.P[b, act, b_prime] == 1.0 and m.R[b, act] == 5.0
    corner = state_index(4, 4)
    assert m.R[corner, 1] == -1.0 and m.P[corner, 1, corner] == 1.0  # south off the grid
    assert m.R[state_index(2, 2), 0] == 0.0


def test_gridworld_a_state_step(rng):
    env = make_gridworld()
    for act in range(4):
        tr = env.step(state_index(0, 1), act, rng)
        assert tr.next_state == state_index(4, 1)
        assert 9.5 <= tr.reward <= 10.5


def test_gridworld_sampled_rewards_match_model():
    env = make_gridworld()
    rng = np.random.default_rng(17)
    sums = np.zeros(100)
    counts = np.zeros(100)
    s = None
    for _ in range(4):
        traj = env.rollout(UNIFORM, 2_500_000, rng, start=s)
        s = traj.last_state
        k = traj.states * 4 + traj.actions
        sums += np.bincount(k, weights=traj.rewards, minlength=100)
        counts += np.bincount(k, minlength=100)
    sigma = 1 / math.sqrt(12)  # U[-0.5, 0.5]
    z = np.abs(sums / counts - env.model.R.ravel()) / (sigma / np.sqrt(counts))
    assert counts.min() >= 20_000
    # 100 simultaneous 3-sigma checks: about 0.27 exceedances are expected by chance alone
    assert np.sum(z > 3) <= 2
    assert np.all(z <= 4.5)


def test_gridworld_resets_cover_all_states(rng):
    env = make_gridworld()
    starts = {env.reset(rng) for _ in range(2000)}
    assert starts == set(range(25))


# random walk


def test_random_walk_embedding():
    env = make_randomwalk()
    fm = env.features
    assert fm.dim == 20
    phi = fm.embed(37, 0)
    assert phi.sum() == 1.0 and phi[3 * 2 + 0] == 1.0
    for s in (1, 10, 11, 100):
        for a in (0, 1):
            assert np.count_nonzero(fm.embed(s, a)) == 1


def test_random_walk_right_terminal(rng):
    env = make_randomwalk()
    tr = env.step(100, 1, rng)
    assert tr.next_terminal and tr.reward == 1.0
    tr = env.step(1, 0, rng)
    assert tr.next_terminal and tr.reward == 0.0
    tr = env.step(50, 1, rng)
    assert tr.next_state == 51 and tr.reward == 0.0 and not tr.next_terminal


def test_random_walk_resets_uniform():
    env = make_randomwalk()
    rng = np.random.default_rng(5)
    draws = np.array([env.reset(rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=102)[1:101] / len(draws)
    assert draws.min() >= 1 and draws.max() <= 100
    assert np.all(np.abs(freq - 0.01) <= 0.002)


def test_random_walk_invalid_sizes():
    with pytest.raises(ConfigurationError):
        make_randomwalk(num_states=95, num_groups=10)


# Mountain Car


def test_mountain_car_reset(rng):
    env = MountainCarEnv()
    for _ in range(200):
        x, v = env.reset(rng)
        assert v == 0.0 and -0.6 <= x < -0.4


def test_mountain_car_dynamics_example():
    env = MountainCarEnv()
    tr = env.step((0.0, 0.0), 1)
    x2, v2 = tr.next_state
    assert v2 == pytest.approx(-0.0025, abs=1e-15)
    assert x2 == pytest.approx(-0.0025, abs=1e-15)
    assert tr.reward == -1.0 and not tr.next_terminal


def test_mountain_car_walls_and_goal():
    env = MountainCarEnv()
    tr = env.step((-1.19, -0.05), 0)
    assert tr.next_state == (X_MIN, 0.0)
    tr = env.step((0.49, 0.05), 2)
    assert tr.next_terminal and tr.next_state[0] == X_MAX


@given(st.floats(X_MIN, X_MAX), st.floats(V_MIN, V_MAX), st.integers(0, 2))
def test_mountain_car_deterministic(x, v, a):
    env = MountainCarEnv()
    assert env.step((x, v), a).next_state == env.step((x, v), a).next_state


def test_mountain_car_invalid_action():
    with pytest.raises(ConfigurationError):
        MountainCarEnv().step((0.0, 0.0), 3)


@given(st.floats(X_MIN, X_MAX), st.floats(V_MIN, V_MAX), st.integers(0, 2))
def test_tile_coding_cardinality(x, v, a):
    fm = TileCoding(4, 4)
    assert fm.dim == 192
    phi = fm.embed((x, v), a)
    block = phi[a * 64:(a + 1) * 64]
    assert block.sum() == 4 and np.count_nonzero(phi) == 4 and set(np.unique(phi)) == {0.0, 1.0}
    assert np.linalg.norm(phi) == 2.0


def _tile_cells(x, v, n=4, tiles=4):
    wx, wv = (X_MAX - X_MIN) / tiles, (V_MAX - V_MIN) / tiles
    return [(min(max(math.floor((x - X_MIN) / wx + m / n), 0), tiles - 1),
             min(max(math.floor((v - V_MIN) / wv + m / n), 0), tiles - 1)) for m in range(n)]


@settings(max_examples=200)
@given(st.floats(X_MIN, X_MAX), st.floats(V_MIN, V_MAX), st.floats(-0.02, 0.02), st.floats(-0.002, 0.002))
def test_tile_coding_invariant_within_tiles(x, v, dx, dv):
    x2 = min(max(x + dx, X_MIN), X_MAX)
    v2 = min(max(v + dv, V_MIN), V_MAX)
    fm = TileCoding(4, 4)
    same_cells = _tile_cells(x, v) == _tile_cells(x2, v2)
    same_phi = np.array_equal(fm.embed((x, v), 1), fm.embed((x2, v2), 1))
    assert same_cells == same_phi


def test_mountain_car_eval_grid():
    states, actions = MountainCarEnv().eval_pairs()
    assert states.shape == (64 * 64 * 3, 2) and len(actions) == 64 * 64 * 3


def test_mountain_car_episode_chaining(rng):
    ep = MountainCarEnv().episode(UNIFORM, 300, rng)
    assert len(ep) <= 300
    np.testing.assert_array_equal(ep.states[1:], ep.next_states[:-1])
    assert ep.truncated == (not ep.next_terminal[-1])


# Baird


@pytest.mark.parametrize("embedding", ["shared", "classic"])
def test_baird_embedding_table(embedding):
    fm = BairdFeatures(embedding)
    own, common = (1.0, 2.0) if embedding == "shared" else (2.0, 1.0)
    for i in range(1, 7):
        expected = np.zeros(7)
        expected[i - 1] = own
        expected[6] = common
        np.testing.assert_array_equal(fm.embed(i, 0), expected)
    np.testing.assert_array_equal(fm.embed(7, 0), 2.0 * np.eye(7)[6])
    norms = [np.linalg.norm(fm.embed(i, 0)) for i in range(1, 8)]
    assert max(norms) == pytest.approx(math.sqrt(5))


def test_baird_state_three():
    np.testing.assert_array_equal(BairdFeatures().embed(3, 0), np.eye(7)[2] + 2 * np.eye(7)[6])


def test_baird_dynamics(rng):
    env = BairdEnv()
    for s in range(1, 8):
        tr = env.step(s, 0)
        assert tr.next_state == 7 and tr.reward == 0.0
    traj = env.rollout(UNIFORM, 70_000, rng)
    freq = np.bincount(traj.states, minlength=8)[1:] / 70_000
    assert np.all(np.abs(freq - 1 / 7) < 0.01)
    w_star = env.optimal_weights
    assert all(env.features.embed(s, 0) @ w_star == 0 for s in range(1, 8))
    with pytest.raises(ConfigurationError):
        BairdFeatures("figure5")


def _expected_td_direction(fm, w, gamma):
    phis = np.array([fm.embed(s, 0) for s in range(1, 8)])
    boot = gamma * (fm.embed(7, 0) @ w)
    return np.mean([(boot - p @ w) * p for p in phis], axis=0)


@pytest.mark.parametrize("embedding, sign", [("classic", 1.0), ("shared", -1.0)])
def test_baird_expected_update_on_e7(embedding, sign):
    # the classic embedding pushes w = c e_7 further out along e_7; the shared one pulls it back
    fm = BairdFeatures(embedding)
    for c in (0.5, 1.0, 7.0):
        d = _expected_td_direction(fm, c * np.eye(7)[6], 0.99)
        assert np.sign(d[6]) == sign


# LDS


def test_lds_system():
    env = LdsEnv()
    np.testing.assert_array_equal(env.A, env.A.T)
    assert np.max(np.abs(np.linalg.eigvalsh(env.A))) == pytest.approx(0.9)
    assert np.linalg.norm(env.theta) == pytest.approx(1.0)
    assert env.reset(None) == (0.0,) * 5
    assert env.features.dim == 5


def test_lds_rollout_matches_step_rule(rng):
    env = LdsEnv(sigma=0.3)
    traj = env.rollout(UNIFORM, 200, rng)
    np.testing.assert_allclose(traj.rewards, traj.states @ env.theta)
    np.testing.assert_array_equal(traj.states[1:], traj.next_states[:-1])
    resid = traj.next_states - traj.states @ env.A.T
    assert abs(resid.std() - 0.3) < 0.05
    phi = env.features.embed(tuple(traj.states[5]), 0)
    np.testing.assert_array_equal(phi, traj.states[5])


def test_lds_same_system_seed_same_system():
    a, b = LdsEnv(system_seed=4), LdsEnv(system_seed=4)
    np.testing.assert_array_equal(a.A, b.A)
    assert not np.array_equal(a.A, LdsEnv(system_seed=5).A)
    with pytest.raises(ConfigurationError):
        LdsEnv(rho=1.0)


# factory


def test_make_env():
    assert make_env("gridworld").model.num_states == 25
    assert make_env("baird", embedding="classic").features.embedding == "classic"
    with pytest.raises(ConfigurationError):
        make_env("cartpole")


def test_custom_tabular(tmp_path):
    model = gridworld_model(0.9)
    path = tmp_path / "grid.txt"
    model.save(path)
    env = make_env("custom-tabular", model_path=str(path), gamma=0.5)
    assert env.gamma == 0.5
    np.testing.assert_array_equal(env.model.P, model.P)


def test_params_are_serializable():
    import json

    for name in ("gridworld", "randomwalk", "mountaincar", "baird", "lds"):
        assert json.loads(json.dumps(make_env(name).params()))["env"] == name


def test_trajectory_type(rng):
    assert isinstance(make_gridworld().rollout(UNIFORM, 5, rng), Trajectory)
