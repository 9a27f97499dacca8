"""Truncated-horizon policy search on oracle-shaped costs.

Each iteration collects a batch of episodes, reshapes their costs with the
oracle potential, estimates k-step truncated advantages with a critic, and
takes a KL-limited natural-gradient step on the cost surrogate. ``k=1``
gives AggreVaTeD with a baseline; ``k=K_INF`` is trust-region policy
gradient with GAE on the shaped costs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .approx import (Architecture, ParamVector, critic_fit, critic_forward, fisher_vector_product,
                     init_params, log_prob_batch, mean_kl, obs_box_affine, weighted_log_prob_grad)
from .approx import MlpPolicy
from .errors import ContractError, NumericError, TrainingDivergence
from .mdp import Discrete, Env, Trajectory, rollout_batch, spawn_rngs
from .shaping import Potential, ZeroPotential, reshape_trajectory

K_INF = math.inf


def parse_k(k) -> Union[int, float]:
    if isinstance(k, str):
        if k.strip().lower() in ("inf", "infinity", "∞"):
            return K_INF
        k = int(k)
    if k == K_INF:
        return K_INF
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer or K_INF, got {k!r}")
    return int(k)


def format_k(k) -> str:
    return "inf" if k == K_INF else str(int(k))


@dataclass
class ThorConfig:
    """Hyperparameters for one training run; ``env`` and ``oracle`` are objects."""

    k: Union[int, float] = 10
    gamma: float = 0.99
    lam: float = 0.95
    batch_episodes: int = 10
    max_iterations: int = 150
    kl_step: float = 0.01
    critic_epochs: int = 25
    critic_lr: float = 1e-3
    critic_method: str = "lbfgs"
    seed: int = 0
    hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64)
    normalize_advantages: bool = True
    close_window: bool = False
    cg_iters: int = 10
    cg_damping: float = 0.1
    cg_tol: float = 1e-10
    fisher_subsample: int = 1
    env: Optional[Env] = None
    oracle: Optional[Potential] = None
    method: str = "thor"

    def __post_init__(self):
        self.k = parse_k(self.k)
        if not self.kl_step > 0:
            raise ValueError("kl_step must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_episodes < 1 or self.max_iterations < 0:
            raise ValueError("batch_episodes must be >= 1 and max_iterations >= 0")
        if self.env is not None and self.k != K_INF and self.k > self.env.horizon:
            raise ValueError(f"k={self.k} exceeds the horizon {self.env.horizon}")


# --------------------------------------------------------------------------
# data collection
# --------------------------------------------------------------------------


def collect_batch(env: Env, policy, batch_episodes: int, rng, first_episode_id: int = 0):
    """``batch_episodes`` episodes, each on a generator spawned from ``rng``.

    ``rng`` may be a seed, a ``SeedSequence`` or a list of generators.
    Returns ``(trajectories, total_steps)``.
    """
    if batch_episodes < 1:
        raise ValueError("batch_episodes must be >= 1")
    if isinstance(rng, (list, tuple)):
        if len(rng) != batch_episodes:
            raise ValueError("need one generator per episode")
        rngs = list(rng)
    else:
        rngs = spawn_rngs(rng, batch_episodes)
    trajs = rollout_batch(env, policy, rngs, first_episode_id)
    return trajs, sum(len(t) for t in trajs)


# --------------------------------------------------------------------------
# advantages
# --------------------------------------------------------------------------


@dataclass
class AdvantageBatch:
    """Per-record advantages aligned with the concatenated batch records."""

    advantages: np.ndarray
    raw_advantages: np.ndarray
    value_targets: np.ndarray
    values: np.ndarray
    mean: float = 0.0
    std: float = 1.0
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=int))

    def __len__(self):
        return len(self.advantages)

    def per_trajectory(self, i: int) -> np.ndarray:
        return self.advantages[self.offsets[i]:self.offsets[i + 1]]


def _critic_fn(critic) -> Callable:
    if critic is None:
        return lambda obs: np.zeros(len(obs))
    if isinstance(critic, ParamVector):
        return lambda obs: critic_forward(critic, obs)
    if isinstance(critic, Potential):
        return critic.evaluate_batch
    if callable(critic):
        return critic
    raise TypeError("critic must be None, a ParamVector, a Potential or a callable")


def _window_sums(delta: np.ndarray, x: float, k) -> np.ndarray:
    """``A_t = sum_{i < min(k, T-t)} x^i delta_{t+i}``."""
    T = len(delta)
    if k == K_INF or k >= T:
        out = np.zeros(T)
        acc = 0.0
        for t in range(T - 1, -1, -1):
            acc = delta[t] + x * acc
            out[t] = acc
        return out
    out = np.array(delta, dtype=float)
    w = 1.0
    for i in range(1, int(k)):
        w *= x
        out[:T - i] += w * delta[i:]
    return out


def truncated_advantages(trajs: Sequence[Trajectory], critic, gamma: float, lam: float, k,
                         normalize: bool = False, close_window: bool = False) -> AdvantageBatch:
    """k-term truncated GAE on shaped costs.

    With ``close_window=False`` this is the hard-truncated GAE sum with
    ``delta_t = c'_t + gamma V(s_{t+1}) (1 - done_t) - V(s_t)``.
    With ``close_window=True`` the final delta of each k-window omits its
    bootstrap term, so the estimate targets the k-step objective
    ``E[sum_{i<k} gamma^i c'_{t+i}] - V(s_t)`` instead of the full-horizon
    return; a window cut short by the time limit still bootstraps from
    ``V(s_{T+1})``. Value targets are ``A_t + V(s_t)`` either way.
    """
    k = parse_k(k)
    vf = _critic_fn(critic)
    if not trajs:
        raise ValueError("empty batch")
    for tr in trajs:
        if tr.shaped_costs is None:
            raise ContractError("trajectories must carry shaped costs; call reshape_trajectory first")
    obs = np.concatenate([t.observations for t in trajs])
    nxt = np.concatenate([t.next_observations for t in trajs])
    v_all = np.asarray(vf(obs), dtype=float)
    vn_all = np.asarray(vf(nxt), dtype=float)
    offsets = np.cumsum([0] + [len(t) for t in trajs])
    x = gamma * lam
    raw = np.zeros(len(obs))
    for i, tr in enumerate(trajs):
        a, b = offsets[i], offsets[i + 1]
        T = b - a
        v, vn = v_all[a:b], np.where(tr.dones, 0.0, vn_all[a:b])
        delta = tr.shaped_costs + gamma * vn - v
        adv = _window_sums(delta, x, k)
        if close_window and k != K_INF and k <= T:
            # complete windows drop the bootstrap of their last delta
            n_full = T - int(k) + 1
            adv[:n_full] -= x ** (int(k) - 1) * gamma * vn[int(k) - 1:T]
        raw[a:b] = adv
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite advantage estimate")
    targets = raw + v_all
    if normalize and len(raw) > 1:
        mean, std = float(raw.mean()), float(max(raw.std(), 1e-8))
        adv = (raw - mean) / std
    else:
        mean, std, adv = 0.0, 1.0, raw.copy()
    return AdvantageBatch(adv, raw, targets, v_all, mean, std, offsets)


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


def _batch_arrays(trajs: Sequence[Trajectory]):
    obs = np.concatenate([t.observations for t in trajs])
    acts = np.concatenate([t.actions for t in trajs])
    return obs, acts


def thor_gradient(trajs: Sequence[Trajectory], advantages: AdvantageBatch, params: ParamVector) -> np.ndarray:
    """``sum_records grad log pi(a_t|s_t) A_t / (number of records)``."""
    obs, acts = _batch_arrays(trajs)
    adv = np.asarray(advantages.advantages, dtype=float)
    if len(adv) != len(obs):
        raise ContractError("advantages are not aligned with the batch records")
    if not np.all(np.isfinite(adv)):
        raise NumericError("non-finite advantage")
    return weighted_log_prob_grad(params, obs, acts, adv / len(adv))


def aggrevated_gradient(trajs: Sequence[Trajectory], oracle: Potential, gamma: float,
                        params: ParamVector, baseline=None) -> np.ndarray:
    """Oracle-advantage gradient built from raw costs:
    ``grad log pi(a_t|s_t) (c_t + gamma V(s_{t+1}) - V(s_t) - b(s_t))`` averaged
    over records, with ``V`` the oracle (zero after a terminal step)."""
    obs, acts = _batch_arrays(trajs)
    nxt = np.concatenate([t.next_observations for t in trajs])
    cost = np.concatenate([t.costs for t in trajs])
    done = np.concatenate([t.dones for t in trajs])
    b = _critic_fn(baseline)(obs)
    q = cost + gamma * np.where(done, 0.0, oracle.evaluate_batch(nxt))
    w = q - oracle.evaluate_batch(obs) - b
    return weighted_log_prob_grad(params, obs, acts, w / len(w))


def truncated_bptt_gradient(traj: Trajectory, params: ParamVector, gamma: float, k) -> np.ndarray:
    """Regrouped form for ``lambda=1`` and a zero critic: every shaped cost
    ``c'_t`` multiplies the discounted scores of the at most ``k`` most recent
    actions, ``sum_t c'_t sum_{i<k, i<=t} gamma^i grad log pi(a_{t-i}|s_{t-i})``,
    divided by the number of records. Slow; for verification."""
    k = parse_k(k)
    T = len(traj)
    total = np.zeros(params.arch.num_params)
    for t in range(T):
        i_max = t if k == K_INF else min(int(k) - 1, t)
        for i in range(i_max + 1):
            s = t - i
            g = weighted_log_prob_grad(params, traj.observations[s:s + 1], traj.actions[s:s + 1], [1.0])
            total += traj.shaped_costs[t] * gamma ** i * g
    return total / T


def per_trajectory_gradients(trajs, advantages: AdvantageBatch, params: ParamVector) -> np.ndarray:
    """(num_trajectories, P): ``sum_t grad log pi(a_t|s_t) A_t`` for each episode."""
    out = []
    for i, tr in enumerate(trajs):
        out.append(weighted_log_prob_grad(params, tr.observations, tr.actions, advantages.per_trajectory(i)))
    return np.stack(out)


# --------------------------------------------------------------------------
# trust-region update
# --------------------------------------------------------------------------


def conjugate_gradient(mvp: Callable, b: np.ndarray, iters: int = 10, tol: float = 1e-10):
    """Solve ``A x = b`` for SPD ``A``; returns ``(x, converged, iterations)``.

    Converged means the residual fell below ``tol * |b|^2`` (squared norms).
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    target = tol * float(b @ b)
    if rr <= target:
        return x, True, 0
    for i in range(1, iters + 1):
        Ap = mvp(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            return x, False, i
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        new_rr = float(r @ r)
        if new_rr <= target:
            return x, True, i
        p = r + (new_rr / rr) * p
        rr = new_rr
    return x, False, iters


@dataclass
class UpdateResult:
    params: ParamVector
    kl: float
    accepted: bool
    fallback: bool
    backtracks: int
    surrogate_before: float
    surrogate_after: float


def surrogate_loss(params: ParamVector, obs, acts, adv, old_logp) -> float:
    """Importance-weighted cost surrogate ``mean(ratio * A)``."""
    ratio = np.exp(log_prob_batch(params, obs, acts) - old_logp)
    return float(np.mean(ratio * adv))


def kl_constrained_update(params: ParamVector, grad: np.ndarray, trajs: Sequence[Trajectory],
                          kl_step: float, advantages: AdvantageBatch, damping: float = 0.1,
                          cg_iters: int = 10, cg_max_iters: int = 50, cg_tol: float = 1e-10,
                          backtrack: float = 0.8, max_backtracks: int = 10,
                          fallback_lr: float = 1e-3, fisher_subsample: int = 1) -> UpdateResult:
    """Natural-gradient descent step inside a mean-KL trust region.

    CG runs ``cg_iters`` iterations and, if not yet converged, continues up
    to ``cg_max_iters`` before warning and using the plain-gradient fallback.
    The step ``sqrt(2 delta / x'Fx) x`` is shrunk by ``backtrack`` until the
    surrogate decreases and the measured KL is within ``kl_step``.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite policy gradient")
    obs, acts = _batch_arrays(trajs)
    adv = np.asarray(advantages.advantages, dtype=float)
    old_logp = log_prob_batch(params, obs, acts)
    base = surrogate_loss(params, obs, acts, adv, old_logp)
    if not np.any(grad):
        return UpdateResult(params, 0.0, False, False, 0, base, base)
    f_obs = obs[::max(1, int(fisher_subsample))]
    mvp = lambda v: fisher_vector_product(params, f_obs, v, damping)
    x, ok, _ = conjugate_gradient(mvp, grad, cg_iters, cg_tol)
    if not ok and cg_max_iters > cg_iters:
        x, ok, _ = conjugate_gradient(mvp, grad, cg_max_iters, cg_tol)
        if not ok:
            warnings.warn("conjugate gradient did not converge; using gradient fallback", RuntimeWarning)
            return _fallback(params, grad, obs, acts, adv, old_logp, base, kl_step, fallback_lr)
    shs = float(x @ mvp(x))
    if not shs > 0 or not math.isfinite(shs):
        return _fallback(params, grad, obs, acts, adv, old_logp, base, kl_step, fallback_lr)
    step = math.sqrt(2 * kl_step / shs) * x
    frac = 1.0
    for j in range(max_backtracks + 1):
        cand = params.replace(params.theta - frac * step)
        kl = mean_kl(params, cand, obs)
        new = surrogate_loss(cand, obs, acts, adv, old_logp)
        if kl <= kl_step and new < base:
            return UpdateResult(cand, kl, True, False, j, base, new)
        frac *= backtrack
    return _fallback(params, grad, obs, acts, adv, old_logp, base, kl_step, fallback_lr)


def _fallback(params, grad, obs, acts, adv, old_logp, base, kl_step, lr) -> UpdateResult:
    step = lr * grad
    for _ in range(20):
        cand = params.replace(params.theta - step)
        kl = mean_kl(params, cand, obs)
        if kl <= kl_step:
            return UpdateResult(cand, kl, True, True, 0, base,
                                surrogate_loss(cand, obs, acts, adv, old_logp))
        step = step / 2
    return UpdateResult(params, 0.0, False, True, 0, base, base)


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    env_steps: int
    mean_return: float
    std_return: float
    shaped_return: float
    kl: float
    critic_loss: float
    success_rate: float


@dataclass
class TrainResult:
    curve: list
    params: ParamVector
    critic: ParamVector
    config: ThorConfig


def episode_success(env: Env, traj: Trajectory) -> bool:
    fn = getattr(env, "is_success", None)
    return bool(fn(traj)) if fn is not None else traj.terminated


def policy_architecture(env: Env, hidden=(64, 64)) -> Architecture:
    low, high = np.asarray(env.observation_low, float), np.asarray(env.observation_high, float)
    shift, scale = obs_box_affine(low, high) if np.all(np.isfinite(low) & np.isfinite(high)) else (None, None)
    if isinstance(env.action_space, Discrete):
        return Architecture(env.observation_dim, env.action_space.n, hidden=tuple(hidden),
                            head="categorical", in_shift=shift, in_scale=scale)
    return Architecture(env.observation_dim, int(np.prod(env.action_space.shape)), hidden=tuple(hidden),
                        head="gaussian", in_shift=shift, in_scale=scale)


def critic_architecture(env: Env, gamma: float, k, hidden=(64, 64)) -> Architecture:
    low, high = np.asarray(env.observation_low, float), np.asarray(env.observation_high, float)
    shift, scale = obs_box_affine(low, high) if np.all(np.isfinite(low) & np.isfinite(high)) else (None, None)
    n = env.horizon if k == K_INF else min(int(k), env.horizon)
    out_scale = float(sum(gamma ** i for i in range(n)))
    return Architecture(env.observation_dim, 1, hidden=tuple(hidden), head="value",
                        in_shift=shift, in_scale=scale, out_scale=max(out_scale, 1.0))


def thor_train(config: ThorConfig, callback: Optional[Callable] = None) -> TrainResult:
    """Run ``max_iterations`` THOR iterations; demos are not used to pre-train."""
    env = config.env
    if env is None:
        raise ContractError("config has no environment")
    oracle = config.oracle if config.oracle is not None else ZeroPotential()
    root = np.random.SeedSequence(config.seed)
    init_ss, roll_ss, critic_ss = root.spawn(3)
    init_rng = np.random.default_rng(init_ss)
    critic_rng = np.random.default_rng(critic_ss)
    params = init_params(policy_architecture(env, config.hidden), init_rng)
    critic = init_params(critic_architecture(env, config.gamma, config.k, config.critic_hidden),
                         init_rng, final_scale=0.01)
    curve = []
    env_steps = 0
    for it in range(1, config.max_iterations + 1):
        it_ss = roll_ss.spawn(1)[0]
        trajs, n_steps = collect_batch(env, MlpPolicy(params), config.batch_episodes, it_ss,
                                       first_episode_id=(it - 1) * config.batch_episodes)
        env_steps += n_steps
        shaped = [reshape_trajectory(t, oracle, config.gamma) for t in trajs]
        adv = truncated_advantages(shaped, critic, config.gamma, config.lam, config.k,
                                   normalize=config.normalize_advantages,
                                   close_window=config.close_window)
        g = thor_gradient(shaped, adv, params)
        upd = kl_constrained_update(params, g, shaped, config.kl_step, adv, damping=config.cg_damping,
                                    cg_iters=config.cg_iters, cg_tol=config.cg_tol,
                                    fisher_subsample=config.fisher_subsample)
        if not np.all(np.isfinite(upd.params.theta)):
            raise TrainingDivergence(f"policy parameters non-finite at iteration {it}")
        params = upd.params
        obs = np.concatenate([t.observations for t in shaped])
        fit = critic_fit(critic, obs, adv.value_targets, epochs=config.critic_epochs,
                         lr=config.critic_lr, method=config.critic_method, rng=critic_rng)
        critic = fit.params
        returns = np.array([-t.costs.sum() for t in trajs])
        rec = IterationRecord(
            iteration=it, env_steps=env_steps,
            mean_return=float(returns.mean()), std_return=float(returns.std()),
            shaped_return=float(np.mean([-t.shaped_costs.sum() for t in shaped])),
            kl=float(upd.kl), critic_loss=float(fit.losses[-1]),
            success_rate=float(np.mean([episode_success(env, t) for t in trajs])),
        )
        curve.append(rec)
        if callback is not None:
            callback(rec)
    return TrainResult(curve, params, critic, config)
