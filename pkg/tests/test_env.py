import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cacc_marl.dynamics import PlatoonState
from cacc_marl.env import (GAIN_TABLE, Observation, PlatoonEnv, RewardWeights, ScenarioSpec, decode_action,
                           env_step, initial_state, observe, observe_all, reset, reward, reward_terms, target_speed)
from cacc_marl.errors import DimensionMismatch, InvalidAction, InvalidSpec
from cacc_marl.ovm import optimal_velocity

CATCHUP = ScenarioSpec()
SLOWDOWN = ScenarioSpec(kind="slowdown")


@pytest.mark.parametrize("seed", range(20))
def test_catchup_reset(seed):
    s, obs = reset(CATCHUP, seed)
    h = s.headways
    np.testing.assert_array_equal(h[1:], 20.0)
    assert 60.0 <= h[0] <= 80.0
    np.testing.assert_array_equal(s.velocities, 15.0)
    assert s.leader_velocity == 15.0
    assert len(obs) == 4 and isinstance(obs[0], Observation)


@pytest.mark.parametrize("seed", range(20))
def test_slowdown_reset(seed):
    s, _ = reset(SLOWDOWN, seed)
    np.testing.assert_allclose(s.headways, 20.0, atol=1e-12)
    v = s.velocities
    assert np.all(v == v[0]) and 22.5 <= v[0] <= 30.0
    assert s.leader_velocity == v[0]


def test_reset_is_seeded():
    a, _ = reset(CATCHUP, 5)
    b, _ = reset(CATCHUP, 5)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    assert a.leader_offset == b.leader_offset


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        ScenarioSpec(platoon_size=1)
    with pytest.raises(InvalidSpec):
        ScenarioSpec(dt=0.07)
    with pytest.raises(ValueError):
        ScenarioSpec(kind="merge")
    assert CATCHUP.n_steps == 600


def test_target_speed():
    assert target_speed(CATCHUP, 17.0) == 15.0
    assert target_speed(SLOWDOWN, 30.0, 25.0) == 15.0
    assert target_speed(SLOWDOWN, 15.0, 25.0) == pytest.approx(20.0)
    assert target_speed(SLOWDOWN, 45.0, 25.0) == 15.0


def test_decode_action():
    assert decode_action(0) == (0.0, 0.0)
    assert decode_action(1) == (0.5, 0.0)
    assert decode_action(2) == (0.0, 0.5)
    assert decode_action(3) == (0.5, 0.5)
    for bad in (4, -1, 1.5, True):
        with pytest.raises(InvalidAction):
            decode_action(bad)


def test_observation_at_anchor():
    s = PlatoonState.from_headways([20.0, 20.0], [18.0, 18.0], 18.0)
    o = observe(s, 1, CATCHUP, [18.0, 18.0])
    vh = np.clip((optimal_velocity(20.0) - 18.0) / 5.0, -2, 2)
    assert (o.v_norm, o.v_diff, o.h_norm, o.u_norm) == (0.0, 0.0, 0.0, 0.0)
    assert o.vh == pytest.approx(vh)


def test_observation_clipping_and_accel():
    s = PlatoonState.from_headways([20.0, 20.0], [30.0, 0.0], 30.0)
    s = s.__class__(s.offsets, s.velocities, np.array([0.0, -2.5]), s.leader_offset, s.leader_velocity)
    o = observe_all(s, CATCHUP, [15.0, 15.0])
    assert o[1, 1] == 2.0
    assert o[1, 4] == -1.0
    assert o[1, 3] == pytest.approx((20.0 + 30.0 * 0.1 - 20.0) / 20.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.5, 200.0), min_size=3, max_size=3), st.lists(st.floats(0.0, 30.0), min_size=3, max_size=3),
       st.floats(0.0, 30.0))
def test_observation_components_bounded(h, v, vl):
    s = PlatoonState.from_headways(h, v, vl)
    o = observe_all(s, CATCHUP, [15.0] * 3)
    assert np.all(np.isfinite(o))
    assert np.all(np.abs(o[:, 1:3]) <= 2.0)


@pytest.mark.parametrize("h, v, u, expected", [
    (20.0, 15.0, 0.0, 0.0), (22.0, 15.0, 0.0, -4.0), (8.0, 15.0, 0.0, -164.0), (20.0, 17.0, 1.0, -4.1),
])
def test_reward_examples(h, v, u, expected):
    s = PlatoonState.from_headways([20.0, h], [15.0, v], 15.0)
    assert reward(s, 1, u, CATCHUP) == pytest.approx(expected, abs=1e-12)


def test_reward_collision_penalty():
    s = PlatoonState.from_headways([20.0, 0.9], [15.0, 15.0], 15.0)
    assert reward(s, 1, 0.0, CATCHUP) == -1000.0


@given(st.floats(1.0, 100.0), st.floats(0.0, 30.0), st.floats(-2.5, 2.5))
def test_reward_non_positive(h, v, u):
    r = reward_terms(h, v, u, 15.0, CATCHUP)
    assert r <= 0.0
    if r == 0.0:
        assert (h, v, u) == (20.0, 15.0, 0.0)


def test_equilibrium_step():
    s = PlatoonState.from_headways([20.0] * 4, [15.0] * 4, 15.0)
    n, obs, r, done = env_step(s, [3, 3, 3, 3], CATCHUP)
    np.testing.assert_array_equal(r, 0.0)
    assert not done and obs.shape == (4, 5)


def test_collision_ends_episode_for_everyone():
    s = PlatoonState.from_headways([20.0, 20.0, 1.05], [15.0, 15.0, 16.0], 15.0)
    n, _, r, done = env_step(s, [0, 0, 0], CATCHUP)
    assert n.collided and done
    np.testing.assert_array_equal(r, -1000.0)


def test_env_step_checks_actions():
    s = PlatoonState.from_headways([20.0] * 3, [15.0] * 3, 15.0)
    with pytest.raises(DimensionMismatch):
        env_step(s, [0, 0], CATCHUP)
    with pytest.raises(InvalidAction):
        env_step(s, [0, 4, 0], CATCHUP)


def test_horizon_gives_exactly_600_transitions():
    env = PlatoonEnv(ScenarioSpec(catchup_gap_factor_range=(1.0, 1.0)))
    env.reset(0)
    steps, done = 0, False
    while not done:
        _, _, done = env.step(np.full(4, 3))
        steps += 1
    assert steps == 600 and not env.state.collided
    with pytest.raises(RuntimeError):
        env.step(np.full(4, 3))


def test_global_reward_is_mean():
    env = PlatoonEnv(CATCHUP)
    env.reset(1)
    _, r, _ = env.step([1, 2, 3, 0])
    assert float(np.mean(r)) == pytest.approx(r.sum() / 4)


def test_slowdown_leader_follows_ramp():
    env = PlatoonEnv(SLOWDOWN)
    env.reset(2)
    v0 = env.v0
    for k in range(1, 451):
        env.step(np.full(4, 3))
        if env.done:
            break
        assert env.state.leader_velocity == pytest.approx(target_speed(SLOWDOWN, k * 0.1, v0), abs=1e-12)


def test_seeded_trajectory_reproducible():
    def run():
        env = PlatoonEnv(SLOWDOWN)
        env.reset(9)
        rng = np.random.default_rng(0)
        out, done = [], False
        while not done:
            _, r, done = env.step(rng.integers(0, 4, 4))
            out.append(r)
        return np.array(out)
    np.testing.assert_array_equal(run(), run())


def test_gain_table_order():
    np.testing.assert_array_equal(GAIN_TABLE, [[0, 0], [0.5, 0], [0, 0.5], [0.5, 0.5]])


def test_custom_weights():
    s = PlatoonState.from_headways([20.0, 22.0], [15.0, 15.0], 15.0)
    assert reward(s, 1, 0.0, CATCHUP, RewardWeights(w1=-2.0)) == -8.0
    assert initial_state(CATCHUP, 0).size == 4
