import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thor.dp import greedy_actions, q_from_v, value_iteration
from thor.errors import NumericError
from thor.mdp import TabularEnv, Trajectory, UniformPolicy, random_mdp, rollout
from thor.shaping import (
    FunctionPotential, ShapedMdp, TabularPotential, ZeroPotential, expected_shaped_costs,
    reshape_trajectory, shape_cost, telescoping_check,
)
from thor.dp import build_counterexample, counterexample_layout


def one_step(c, s, s_next, done=False):
    return Trajectory(np.array([[s]], float), np.array([0]), [c], np.array([[s_next]], float), [done])


def test_zero_potential_leaves_cost():
    assert shape_cost(1.7, ZeroPotential(), 0.9, 0, 1) == 1.7


def test_constant_potential():
    phi = FunctionPotential(lambda s: 1.0)
    assert shape_cost(0.0, phi, 0.9, 0, 1) == pytest.approx(-0.1, abs=1e-15)


def test_non_finite_potential_rejected():
    phi = FunctionPotential(lambda s: np.inf)
    with pytest.raises(NumericError):
        shape_cost(0.0, phi, 0.9, 0, 1)


def test_counterexample_expected_shaped_cost():
    gamma, delta = 0.9, 0.01
    mdp, vhat = build_counterexample(20, gamma, delta)
    top = counterexample_layout(20)["top"]
    c = expected_shaped_costs(mdp, vhat)
    assert c[top[3], 0] == pytest.approx(gamma * (0.5 + delta) - (0.5 + delta), abs=1e-12)
    assert c[top[3], 0] == pytest.approx(-0.051, abs=1e-12)


def test_reshape_single_step_hand_value():
    phi = FunctionPotential(lambda s: {0.0: 2.0, 1.0: 3.0}[float(np.asarray(s).reshape(-1)[0])])
    out = reshape_trajectory(one_step(1.0, 0.0, 1.0), phi, 0.5)
    assert out.shaped_costs[0] == pytest.approx(0.5)
    assert out.costs[0] == 1.0


def test_reshape_zero_potential_identity(small_mdp):
    env = TabularEnv(small_mdp, horizon=12)
    traj = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(0))
    assert np.array_equal(reshape_trajectory(traj, ZeroPotential(), 0.9).shaped_costs, traj.costs)


def test_reshape_requires_next_states():
    t = Trajectory(np.zeros((1, 1)), [0], [1.0], None, [False])
    with pytest.raises(ValueError):
        reshape_trajectory(t, ZeroPotential(), 0.9)


def test_reshape_matches_per_record_shape_cost(small_mdp):
    env = TabularEnv(small_mdp, horizon=30)
    phi = TabularPotential(np.random.default_rng(1).normal(size=5))
    traj = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(3))
    out = reshape_trajectory(traj, phi, 0.9)
    ref = [shape_cost(r.cost, phi, 0.9, r.state, r.next_state) for r in traj.records()]
    assert np.allclose(out.shaped_costs, ref, atol=0, rtol=1e-15)


def test_terminal_potential_is_zero():
    phi = FunctionPotential(lambda s: 5.0)
    out = reshape_trajectory(one_step(1.0, 0.0, 1.0, done=True), phi, 0.9)
    assert out.shaped_costs[0] == pytest.approx(1.0 - 5.0)


def test_telescoping_zero_cost():
    phi = TabularPotential([1.0, -2.0, 0.5])
    obs = np.eye(3)[[0, 1, 2]]
    nxt = np.eye(3)[[1, 2, 0]]
    t = Trajectory(obs, [0, 0, 0], [0.0, 0.0, 0.0], nxt, [False] * 3)
    lhs, rhs = telescoping_check(t, phi, 0.8)
    assert lhs == pytest.approx(0.8 ** 3 * 1.0 - 1.0, abs=1e-12)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_telescoping_zero_potential(small_mdp):
    env = TabularEnv(small_mdp, horizon=10)
    traj = rollout(env, UniformPolicy(env.action_space), np.random.default_rng(4))
    lhs, rhs = telescoping_check(traj, ZeroPotential(), 0.9)
    assert lhs == rhs == pytest.approx(float(np.dot(0.9 ** np.arange(10), traj.costs)))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.floats(0.0, 0.99), st.integers(0, 10_000))
def test_telescoping_property(S, A, gamma, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, 0.5, rng)
    env = TabularEnv(mdp, horizon=int(rng.integers(1, 40)), terminal_states=[S - 1])
    phi = TabularPotential(rng.normal(scale=10, size=S))
    traj = rollout(env, UniformPolicy(env.action_space), rng)
    lhs, rhs = telescoping_check(traj, phi, gamma)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(2, 4), st.sampled_from([0.5, 0.9, 0.99]), st.integers(0, 10_000))
def test_shaped_values_and_policy_invariance(S, A, gamma, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, gamma, rng)
    phi = rng.normal(scale=5, size=S)
    shaped = ShapedMdp(mdp, phi).mdp
    v0, q0 = value_iteration(mdp, 1e-10)
    v1, q1 = value_iteration(shaped, 1e-10)
    assert np.max(np.abs(v1.values - (v0.values - phi))) <= 1e-6
    srt = np.sort(q0.values, axis=1)
    untied = srt[:, 1] - srt[:, 0] > 1e-6
    a0, a1 = greedy_actions(q0.values), greedy_actions(q1.values)
    assert np.array_equal(a0[untied], a1[untied])


def test_optimal_potential_zeros_shaped_values(small_mdp):
    v, q = value_iteration(small_mdp, 1e-12)
    shaped = ShapedMdp(small_mdp, v.values).mdp
    vs, qs = value_iteration(shaped, 1e-10)
    assert np.max(np.abs(vs.values)) <= 1e-8
    myopic = greedy_actions(shaped.cost_mean)
    assert np.array_equal(myopic, greedy_actions(q.values))


def test_shaped_mdp_keeps_dynamics(small_mdp):
    s = ShapedMdp(small_mdp, np.ones(5))
    assert s.mdp.transition is small_mdp.transition or np.array_equal(s.mdp.transition, small_mdp.transition)
    assert s.mdp.discount == small_mdp.discount
    assert np.array_equal(s.mdp.initial_dist, small_mdp.initial_dist)
    assert np.allclose(s.cost_mean, small_mdp.cost_mean + 0.9 - 1.0)


def test_expected_shaped_cost_matches_q_relation(small_mdp):
    phi = np.arange(5.0)
    c = expected_shaped_costs(small_mdp, phi)
    assert np.allclose(c, q_from_v(small_mdp, phi) - phi[:, None], atol=1e-14)
