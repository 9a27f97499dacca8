import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thor.envs import ENV_NAMES, make_env, scripted_expert
from thor.envs.classic import Acrobot, CartPoleParams, CartPoleSparse, PendulumSparse, wrap_angle
from thor.envs.experts import parse_quality
from thor.envs.grid import Grid
from thor.errors import ContractError, NumericError
from thor.mdp import DegradedPolicy, UniformPolicy, rollout, rollout_batch, spawn_rngs


def test_make_env_unknown_name():
    with pytest.raises(ValueError):
        make_env("lunar_lander")


def test_make_env_horizons():
    assert make_env("mountain_car").horizon == 200
    assert make_env("acrobot").horizon == 500
    assert make_env("acrobot", horizon=200).horizon == 200


def test_mountain_car_unit_cost_until_goal():
    env = make_env("mountain_car", horizon=200)
    traj = rollout(env, scripted_expert("mountain_car"), np.random.default_rng(0))
    assert np.all(traj.costs == 1.0)
    assert traj.terminated and traj.next_observations[-1, 0] >= env.p.goal_position
    assert not np.any(env.at_goal(traj.observations))


def test_mountain_car_valley_equilibrium():
    env = make_env("mountain_car")
    s = np.array([-np.pi / 6, 0.0])
    for _ in range(50):
        s = env.physics_step(s, 1)
    assert abs(s[0] + np.pi / 6) < 1e-9 and abs(s[1]) < 1e-9


def test_cartpole_upright_equilibrium():
    env = CartPoleSparse(params=CartPoleParams(force_mag=0.0))
    s = np.zeros(5)
    for _ in range(20):
        s = env.physics_step(s, 0)
    assert np.all(s[:4] == 0.0)


def test_acrobot_energy_conserved_without_torque():
    env = Acrobot(clip_velocity=False)
    s = np.array([0.3, -0.2, 0.0, 0.0])
    e0 = env.energy(s)
    energies = []
    for _ in range(100):
        s = env.physics_step(s, 1)
        energies.append(env.energy(s))
    assert np.max(np.abs(np.array(energies) - e0)) <= 0.01 * abs(e0)


def test_physics_step_non_finite_raises():
    env = make_env("mountain_car")
    with pytest.raises(NumericError):
        env.physics_step(np.array([np.nan, 0.0]), 1)


def test_cartpole_sparse_cost_contract():
    env = make_env("cartpole_sparse", horizon=200)
    fail = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(0))
    assert fail.terminated and len(fail) < 200 and np.all(fail.costs == 0.0)
    ok = rollout(env, scripted_expert("cartpole_sparse"), np.random.default_rng(1))
    assert len(ok) == 200 and ok.terminated
    assert np.all(ok.costs[:-1] == 0.0) and ok.costs[-1] == -1.0
    assert env.is_success(ok) and not env.is_success(fail)


def test_pendulum_sparse_cost_contract():
    env = make_env("pendulum_sparse")
    traj = rollout(env, scripted_expert("pendulum_sparse"), np.random.default_rng(2))
    assert traj.terminated and traj.costs[-1] == -1.0 and np.all(traj.costs[:-1] == 0.0)
    nxt = env.physics_step(np.array([0.0, 0.0]), np.array([100.0]))
    ref = env.physics_step(np.array([0.0, 0.0]), np.array([2.0]))
    assert np.array_equal(nxt, ref)


def test_dense_schemes_selectable():
    env = make_env("cartpole_sparse", cost_scheme="dense")
    tr = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(0))
    assert np.all(tr.costs[:-1] == -1.0)
    with pytest.raises(ValueError):
        make_env("pendulum_sparse", cost_scheme="shaped")


@pytest.mark.parametrize("name", ENV_NAMES)
def test_determinism_same_seed(name):
    env = make_env(name, horizon=60)
    pol = UniformPolicy(env.action_space if name != "pendulum_sparse" else env.torque_space)
    a = rollout(env, pol, np.random.default_rng(9))
    b = rollout(env, pol, np.random.default_rng(9))
    assert np.array_equal(a.observations, b.observations) and np.array_equal(a.costs, b.costs)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_observations_within_bounds(name):
    env = make_env(name, horizon=150)
    pol = UniformPolicy(env.action_space if name != "pendulum_sparse" else env.torque_space)
    for tr in rollout_batch(env, pol, spawn_rngs(0, 10)):
        for arr in (tr.observations, tr.next_observations):
            assert np.all(arr >= env.observation_low) and np.all(arr <= env.observation_high)
            assert np.all(np.isfinite(arr))


def test_angles_wrapped():
    env = make_env("acrobot", horizon=300)
    tr = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(5))
    assert np.all(np.abs(tr.observations[:, :2]) <= np.pi)
    assert np.allclose(wrap_angle(np.array([3 * np.pi, -3 * np.pi + 0.1])), [-np.pi, -np.pi + 0.1])


def test_sparse_variants_have_nonzero_cost_only_at_termination():
    for name in ("cartpole_sparse", "pendulum_sparse"):
        env = make_env(name, horizon=120)
        pol = scripted_expert(name, "degraded(0.3)")
        for tr in rollout_batch(env, pol, spawn_rngs(1, 10)):
            assert np.all(tr.costs[:-1] == 0.0)
            if tr.costs[-1] != 0.0:
                assert tr.terminated


def test_step_rejects_invalid_action():
    env = make_env("mountain_car")
    env.reset(np.random.default_rng(0))
    with pytest.raises(ContractError):
        env.step(3, np.random.default_rng(0))


def test_episode_length_never_exceeds_horizon():
    env = make_env("mountain_car", horizon=37)
    tr = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(0))
    assert len(tr) == 37 and tr.truncated


@pytest.mark.parametrize("name", ENV_NAMES)
def test_optimal_expert_success_rate(name):
    env = make_env(name)
    trajs = rollout_batch(env, scripted_expert(name), spawn_rngs(2024, 100))
    rate = np.mean([env.is_success(t) if hasattr(env, "is_success") else t.terminated for t in trajs])
    assert rate >= 0.95


def test_degraded_extremes():
    env = make_env("mountain_car", horizon=50)
    full = scripted_expert("mountain_car", "degraded(1.0)")
    uni = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(3))
    deg = rollout(env, full, np.random.default_rng(3))
    assert np.array_equal(uni.actions, deg.actions)
    zero = scripted_expert("mountain_car", "degraded(0)")
    opt = scripted_expert("mountain_car", "optimal")
    obs = rollout(env, opt, np.random.default_rng(4)).observations
    assert [zero.act(o, None) for o in obs] == [opt.act(o, None) for o in obs]
    assert isinstance(scripted_expert("mountain_car", "degraded(0.3)"), DegradedPolicy)


def test_parse_quality():
    assert parse_quality("optimal") == 0.0
    assert parse_quality("degraded(0.25)") == 0.25
    assert parse_quality(0.5) == 0.5
    with pytest.raises(ValueError):
        parse_quality("great")


def test_pendulum_expert_emits_valid_torques():
    env = make_env("pendulum_sparse", horizon=40)
    pol = scripted_expert("pendulum_sparse", "degraded(0.5)")
    tr = rollout(env, pol, np.random.default_rng(0))
    assert np.all(np.abs(tr.actions) <= env.p.max_torque)
    assert isinstance(env, PendulumSparse)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-2.0, 2.0))
def test_grid_interpolation_reproduces_linear_functions(x, y):
    g = Grid((-1.0, -2.0), (1.0, 2.0), (5, 7), (False, False))
    nodes = g.nodes()
    f = 3 * nodes[:, 0] - 0.5 * nodes[:, 1] + 1
    val = g.interpolate(f, np.array([[x, y]]))[0]
    assert val == pytest.approx(3 * x - 0.5 * y + 1, abs=1e-9)


def test_grid_periodic_wrap():
    g = Grid((-np.pi,), (np.pi,), (9,), (True,))
    f = np.sin(g.nodes()[:, 0])
    a = g.interpolate(f, np.array([[0.3]]))
    b = g.interpolate(f, np.array([[0.3 + 2 * np.pi]]))
    assert np.allclose(a, b)
