import math

import numpy as np
import pytest

from conftest import cycle_mdp
from thor.algo import (
    K_INF, AdvantageBatch, ThorConfig, aggrevated_gradient, collect_batch, conjugate_gradient,
    format_k, kl_constrained_update, parse_k, per_trajectory_gradients, thor_gradient, thor_train,
    truncated_advantages, truncated_bptt_gradient,
)
from thor.approx import (
    Architecture, MlpPolicy, ParamVector, fisher_vector_product, init_params, log_prob_grad,
    mean_kl, policy_forward_batch, weighted_log_prob_grad,
)
from thor.dp import expected_cost_J, policy_iteration, value_iteration
from thor.errors import ContractError, NumericError
from thor.mdp import TabularEnv, TabularPolicy, Trajectory, random_mdp, spawn_rngs
from thor.oracle import returns_to_go
from thor.shaping import FunctionPotential, TabularPotential, ZeroPotential, reshape_trajectory

GAMMA = 0.9


def tabular_env(seed=7, horizon=12):
    mdp = random_mdp(5, 3, GAMMA, np.random.default_rng(seed))
    return TabularEnv(mdp, horizon=horizon, terminal_states=[4])


def random_policy_params(seed=0, S=5, A=3, hidden=(6,)):
    rng = np.random.default_rng(seed)
    arch = Architecture(S, A, hidden=hidden, head="categorical")
    return ParamVector(rng.normal(scale=0.5, size=arch.num_params), arch)


def shaped_batch(seed=0, n=6, potential=None, horizon=12):
    env = tabular_env(horizon=horizon)
    params = random_policy_params(seed)
    trajs, _ = collect_batch(env, MlpPolicy(params), n, seed)
    pot = potential if potential is not None else TabularPotential(np.random.default_rng(seed).normal(size=5))
    return [reshape_trajectory(t, pot, GAMMA) for t in trajs], params, pot


def random_critic(seed=1):
    w = np.random.default_rng(seed).normal(size=5)
    return lambda obs: np.asarray(obs) @ w


def explicit_advantages(tr, critic, gamma, lam, k):
    """Direct double loop over the truncated GAE window."""
    v = critic(tr.observations)
    vn = np.where(tr.dones, 0.0, critic(tr.next_observations))
    delta = tr.shaped_costs + gamma * vn - v
    T = len(tr)
    window = T if k == K_INF else k
    return np.array([sum((gamma * lam) ** i * delta[t + i] for i in range(min(window, T - t)))
                     for t in range(T)])


def test_parse_and_format_k():
    assert parse_k("inf") == K_INF and parse_k(" Infinity ") == K_INF and parse_k("3") == 3
    assert format_k(K_INF) == "inf" and format_k(10) == "10"
    for bad in (0, -1, 1.5):
        with pytest.raises(ValueError):
            parse_k(bad)


def test_config_invariants():
    env = tabular_env(horizon=12)
    with pytest.raises(ValueError):
        ThorConfig(k=13, env=env)
    with pytest.raises(ValueError):
        ThorConfig(kl_step=0.0)
    assert ThorConfig(k="inf", env=env).k == K_INF


@pytest.mark.parametrize("k", [1, 2, 5, K_INF])
@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_truncated_advantages_match_direct_sum(k, lam):
    trajs, _, _ = shaped_batch(3)
    critic = random_critic()
    adv = truncated_advantages(trajs, critic, GAMMA, lam, k)
    ref = np.concatenate([explicit_advantages(t, critic, GAMMA, lam, k) for t in trajs])
    assert np.allclose(adv.raw_advantages, ref, atol=1e-12)
    assert np.allclose(adv.value_targets, ref + adv.values, atol=1e-12)


def one_step_deltas(trajs, critic):
    out = []
    for t in trajs:
        vn = np.where(t.dones, 0.0, critic(t.next_observations))
        out.append(t.shaped_costs + GAMMA * vn - critic(t.observations))
    return np.concatenate(out)


def test_lambda_zero_gives_td_errors():
    trajs, _, _ = shaped_batch(4)
    critic = random_critic()
    deltas = one_step_deltas(trajs, critic)
    for k in (1, 3, K_INF):
        assert np.allclose(truncated_advantages(trajs, critic, GAMMA, 0.0, k).advantages, deltas, atol=1e-14)


def test_k_one_ignores_lambda():
    trajs, _, _ = shaped_batch(5)
    critic = random_critic()
    deltas = one_step_deltas(trajs, critic)
    for lam in (0.3, 0.95, 1.0):
        assert np.allclose(truncated_advantages(trajs, critic, GAMMA, lam, 1).advantages, deltas, atol=1e-14)


def test_full_window_zero_critic_is_shaped_return_to_go():
    trajs, _, _ = shaped_batch(6)
    T = max(len(t) for t in trajs)
    for k in (T, T + 5, K_INF):
        adv = truncated_advantages(trajs, None, GAMMA, 1.0, k)
        ref = np.concatenate([returns_to_go(t.shaped_costs, GAMMA) for t in trajs])
        assert np.allclose(adv.advantages, ref, atol=1e-12)


def test_normalized_advantages_have_zero_mean_unit_std():
    trajs, _, _ = shaped_batch(7, n=10)
    adv = truncated_advantages(trajs, random_critic(), GAMMA, 0.95, 4, normalize=True)
    assert abs(adv.advantages.mean()) <= 1e-6 and abs(adv.advantages.std() - 1) <= 1e-6
    assert np.allclose(adv.advantages * adv.std + adv.mean, adv.raw_advantages, atol=1e-12)


def test_missing_shaped_costs_rejected():
    env = tabular_env()
    trajs, _ = collect_batch(env, MlpPolicy(random_policy_params()), 2, 0)
    with pytest.raises(ContractError):
        truncated_advantages(trajs, None, GAMMA, 0.9, 3)


def test_zero_advantages_give_zero_gradient():
    trajs, params, _ = shaped_batch(8)
    n = sum(len(t) for t in trajs)
    zero = AdvantageBatch(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))
    assert np.array_equal(thor_gradient(trajs, zero, params), np.zeros(params.arch.num_params))


def test_gradient_rejects_bad_advantages():
    trajs, params, _ = shaped_batch(8)
    n = sum(len(t) for t in trajs)
    bad = np.full(n, np.nan)
    with pytest.raises(NumericError):
        thor_gradient(trajs, AdvantageBatch(bad, bad, bad, bad), params)
    short = np.zeros(n - 1)
    with pytest.raises(ContractError):
        thor_gradient(trajs, AdvantageBatch(short, short, short, short), params)


@pytest.mark.parametrize("seed", range(5))
def test_k_one_gradient_equals_aggrevated(seed):
    trajs, params, pot = shaped_batch(seed, n=8)
    adv = truncated_advantages(trajs, None, GAMMA, 0.95, 1)
    g = thor_gradient(trajs, adv, params)
    ref = aggrevated_gradient(trajs, pot, GAMMA, params)
    assert np.max(np.abs(g - ref)) <= 1e-10


def test_closed_window_k_one_equals_aggrevated_with_baseline():
    trajs, params, pot = shaped_batch(9, n=8)
    critic = random_critic(3)
    adv = truncated_advantages(trajs, critic, GAMMA, 0.95, 1, close_window=True)
    g = thor_gradient(trajs, adv, params)
    ref = aggrevated_gradient(trajs, pot, GAMMA, params, baseline=critic)
    assert np.max(np.abs(g - ref)) <= 1e-10


def test_closed_window_targets_k_step_cost():
    trajs, _, _ = shaped_batch(10)
    k = 3
    adv = truncated_advantages(trajs, None, GAMMA, 1.0, k, close_window=True)
    ref = []
    for t in trajs:
        c, T = t.shaped_costs, len(t)
        ref.extend(sum(GAMMA ** i * c[s + i] for i in range(min(k, T - s))) for s in range(T))
    assert np.allclose(adv.advantages, ref, atol=1e-12)


def toy_trajectory():
    obs = np.eye(5)[[0, 2, 1]]
    nxt = np.eye(5)[[2, 1, 3]]
    t = Trajectory(obs, [2, 0, 1], [0.4, -1.0, 2.5], nxt, [False, False, False], truncated=True)
    return reshape_trajectory(t, TabularPotential([0.3, -0.7, 1.1, 0.2, 0.0]), GAMMA)


@pytest.mark.parametrize("k", [1, 2, 3, K_INF])
def test_summation_order_identity(k):
    tr = toy_trajectory()
    params = random_policy_params(11)
    adv = truncated_advantages([tr], None, GAMMA, 1.0, k)
    per_record = thor_gradient([tr], adv, params)
    assert np.max(np.abs(per_record - truncated_bptt_gradient(tr, params, GAMMA, k))) <= 1e-14
    # hand-expanded regrouping for the 3-step case
    g = [log_prob_grad(params, tr.observations[t], tr.actions[t]) for t in range(3)]
    c = tr.shaped_costs
    w = 3 if k == K_INF else k
    by_hand = sum(c[t] * sum(GAMMA ** i * g[t - i] for i in range(min(w, t + 1))) for t in range(3)) / 3
    assert np.max(np.abs(per_record - by_hand)) <= 1e-14


def test_k_inf_shaped_and_raw_differ_by_boundary_terms():
    pot = TabularPotential(np.random.default_rng(12).normal(size=5))
    shaped, params, _ = shaped_batch(12, n=8, potential=pot)
    raw = [reshape_trajectory(t, ZeroPotential(), GAMMA) for t in shaped]
    g_shaped = thor_gradient(shaped, truncated_advantages(shaped, None, GAMMA, 1.0, K_INF), params)
    g_raw = thor_gradient(raw, truncated_advantages(raw, None, GAMMA, 1.0, K_INF), params)
    weights = []
    for t in shaped:
        T = len(t)
        end = 0.0 if t.terminated else pot.evaluate(t.next_observations[-1])
        weights.append(GAMMA ** (T - np.arange(T)) * end - pot.evaluate_batch(t.observations))
    obs = np.concatenate([t.observations for t in shaped])
    acts = np.concatenate([t.actions for t in shaped])
    w = np.concatenate(weights)
    boundary = weighted_log_prob_grad(params, obs, acts, w / len(w))
    assert np.max(np.abs(g_shaped - g_raw - boundary)) <= 1e-10


def test_per_trajectory_gradients_sum_to_batch_gradient():
    trajs, params, _ = shaped_batch(13)
    adv = truncated_advantages(trajs, random_critic(), GAMMA, 0.9, 4)
    per = per_trajectory_gradients(trajs, adv, params)
    assert per.shape == (len(trajs), params.arch.num_params)
    assert np.allclose(per.sum(axis=0) / len(adv), thor_gradient(trajs, adv, params), atol=1e-13)


def test_conjugate_gradient_solves_spd_system():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    A = M @ M.T + 0.5 * np.eye(6)
    b = rng.normal(size=6)
    x, ok, _ = conjugate_gradient(lambda v: A @ v, b, iters=50)
    assert ok and np.allclose(x, np.linalg.solve(A, b), atol=1e-8)


def test_kl_update_zero_gradient_is_identity():
    trajs, params, _ = shaped_batch(14)
    adv = truncated_advantages(trajs, None, GAMMA, 0.9, 2)
    upd = kl_constrained_update(params, np.zeros(params.arch.num_params), trajs, 0.01, adv)
    assert np.array_equal(upd.params.theta, params.theta) and not upd.accepted


@pytest.mark.parametrize("seed", range(8))
def test_kl_update_respects_trust_region(seed):
    trajs, params, _ = shaped_batch(seed, n=8)
    adv = truncated_advantages(trajs, random_critic(seed), GAMMA, 0.9, 3, normalize=True)
    g = thor_gradient(trajs, adv, params)
    for kl_step in (1e-3, 1e-2, 0.1):
        upd = kl_constrained_update(params, g, trajs, kl_step, adv)
        obs = np.concatenate([t.observations for t in trajs])
        if upd.accepted:
            assert mean_kl(params, upd.params, obs) <= kl_step + 1e-6
            assert upd.surrogate_after < upd.surrogate_before or upd.fallback


def test_kl_update_rejects_non_finite_gradient():
    trajs, params, _ = shaped_batch(15)
    adv = truncated_advantages(trajs, None, GAMMA, 0.9, 2)
    with pytest.raises(NumericError):
        kl_constrained_update(params, np.full(params.arch.num_params, np.inf), trajs, 0.01, adv)


def test_natural_direction_on_two_parameter_bandit():
    # logits equal the two weights when the single input is 1 and there is no bias
    arch = Architecture(1, 2, hidden=(), head="categorical", bias=False)
    params = ParamVector(np.array([0.3, -0.4]), arch)
    p = policy_forward_batch(params, np.ones((1, 1)))[0]
    damping = 0.1
    F = np.diag(p) - np.outer(p, p)
    acts = [0, 1, 1, 0, 1, 0, 0, 0]
    costs = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]
    trajs = [reshape_trajectory(Trajectory(np.ones((1, 1)), [a], [c], np.ones((1, 1)), [True]), ZeroPotential(), 0.9)
             for a, c in zip(acts, costs)]
    adv = truncated_advantages(trajs, None, 0.9, 1.0, 1)
    g = thor_gradient(trajs, adv, params)
    x, ok, _ = conjugate_gradient(lambda v: fisher_vector_product(params, np.ones((1, 1)), v, damping), g)
    closed = np.linalg.solve(F + damping * np.eye(2), g)
    assert ok and np.max(np.abs(x - closed)) <= 1e-6
    upd = kl_constrained_update(params, g, trajs, 1e-3, adv, damping=damping)
    assert upd.accepted and not upd.fallback
    step = params.theta - upd.params.theta
    assert np.max(np.abs(step / np.linalg.norm(step) - closed / np.linalg.norm(closed))) <= 1e-6


def test_collect_batch_deterministic_env_gives_identical_episodes():
    env = TabularEnv(cycle_mdp(gamma=0.5), horizon=7)
    trajs, steps = collect_batch(env, TabularPolicy.from_actions([0, 0], 1), 4, 3)
    assert steps == 28
    for t in trajs[1:]:
        assert np.array_equal(t.observations, trajs[0].observations)
        assert np.array_equal(t.costs, trajs[0].costs)


def test_collect_batch_single_and_invalid():
    env = tabular_env()
    trajs, steps = collect_batch(env, MlpPolicy(random_policy_params()), 1, 0)
    assert len(trajs) == 1 and steps == len(trajs[0])
    with pytest.raises(ValueError):
        collect_batch(env, MlpPolicy(random_policy_params()), 0, 0)
    with pytest.raises(ValueError):
        collect_batch(env, MlpPolicy(random_policy_params()), 3, spawn_rngs(0, 2))


def test_episode_streams_do_not_collide():
    root = np.random.SeedSequence(0)
    streams = []
    for it_ss in root.spawn(20):  # one child per training iteration
        streams.extend(spawn_rngs(it_ss, 10))
    draws = [r.integers(0, 2 ** 63, size=2000) for r in streams]
    seen = set()
    for d in draws:
        vals = set(d.tolist())
        assert not (vals & seen)
        seen |= vals
    assert len(seen) == 200 * 2000


def test_collect_batch_is_reproducible():
    env = tabular_env()
    pol = MlpPolicy(random_policy_params())
    a, _ = collect_batch(env, pol, 5, 42)
    b, _ = collect_batch(env, pol, 5, 42)
    c, _ = collect_batch(env, pol, 5, 43)
    assert all(np.array_equal(x.actions, y.actions) for x, y in zip(a, b))
    assert not all(np.array_equal(x.actions, y.actions) for x, y in zip(a, c) if len(x) == len(y))


def small_config(**kw):
    base = dict(k=K_INF, gamma=GAMMA, lam=0.95, batch_episodes=4, max_iterations=4, hidden=(8,),
                critic_hidden=(8,), critic_epochs=5, env=tabular_env(horizon=15), seed=3)
    base.update(kw)
    return ThorConfig(**base)


def test_k_inf_zero_potential_is_unshaped_baseline():
    a = thor_train(small_config(oracle=None))
    b = thor_train(small_config(oracle=ZeroPotential()))
    assert np.array_equal(a.params.theta, b.params.theta)
    for rec in a.curve:
        assert rec.shaped_return == rec.mean_return
    c = thor_train(small_config(oracle=TabularPotential(np.arange(5.0))))
    assert any(r.shaped_return != r.mean_return for r in c.curve)


def test_training_is_reproducible_and_reports_each_iteration():
    seen = []
    a = thor_train(small_config(k=3), callback=seen.append)
    b = thor_train(small_config(k=3))
    assert [r.iteration for r in a.curve] == [1, 2, 3, 4] and seen == a.curve
    assert a.curve == b.curve and np.array_equal(a.params.theta, b.params.theta)
    assert all(r.env_steps > 0 for r in a.curve)
    assert all(np.diff([r.env_steps for r in a.curve]) > 0)
    assert all(r.kl <= 0.01 + 1e-6 for r in a.curve)


def test_training_aborts_on_non_finite_oracle():
    bad = FunctionPotential(lambda x: math.inf)
    with pytest.raises(NumericError):
        thor_train(small_config(oracle=bad, max_iterations=1))


def test_training_requires_env():
    with pytest.raises(ContractError):
        thor_train(ThorConfig())


@pytest.mark.parametrize("mdp_seed", [0, 1, 7])
def test_k_one_with_exact_oracle_converges_on_five_state_mdp(mdp_seed):
    mdp = random_mdp(5, 3, 0.9, np.random.default_rng(mdp_seed))
    v_star, _ = value_iteration(mdp, 1e-12)
    _, pi_star = policy_iteration(mdp)
    cfg = ThorConfig(k=1, gamma=0.9, lam=0.95, batch_episodes=10, max_iterations=200, kl_step=0.02,
                     hidden=(16,), critic_hidden=(16,), env=TabularEnv(mdp, horizon=50),
                     oracle=TabularPotential(v_star.values), seed=0, normalize_advantages=False)
    res = thor_train(cfg)
    probs = policy_forward_batch(res.params, np.eye(5))
    gap = expected_cost_J(mdp, TabularPolicy(probs)) - expected_cost_J(mdp, pi_star)
    assert gap <= 1e-2
