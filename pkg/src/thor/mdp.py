"""Core MDP and environment abstractions, trajectories and seeded sampling.

Everything in the package minimizes *cost*. Rewards only appear at the
reporting layer (see :mod:`thor.harness`).
"""
from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ContractError

ROW_TOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP ``(S, A, P, C, gamma, nu)``.

    ``transition[s, a]`` is the next-state distribution, ``cost_mean[s, a]``
    the mean cost and ``cost_noise_std[s, a]`` the std of the Gaussian cost
    noise (zero by default). State-cost MDPs use a cost constant across actions.
    """

    transition: np.ndarray
    cost_mean: np.ndarray
    discount: float
    initial_dist: np.ndarray
    cost_noise_std: Optional[np.ndarray] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        c = _frozen(self.cost_mean)
        nu = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if c.shape != (S, A):
            raise ValueError(f"cost_mean must have shape {(S, A)}, got {c.shape}")
        if nu.shape != (S,):
            raise ValueError(f"initial_dist must have shape {(S,)}, got {nu.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("transition rows must be non-negative and sum to 1")
        if np.any(nu < 0) or abs(nu.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_dist must be a probability vector")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost_mean must be finite")
        sigma = np.zeros((S, A)) if self.cost_noise_std is None else self.cost_noise_std
        sigma = _frozen(np.broadcast_to(sigma, (S, A)))
        if np.any(sigma < 0):
            raise ValueError("cost_noise_std must be non-negative")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "cost_mean", c)
        object.__setattr__(self, "initial_dist", nu)
        object.__setattr__(self, "cost_noise_std", sigma)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def max_abs_cost(self) -> float:
        return float(np.max(np.abs(self.cost_mean)))

    def with_costs(self, cost_mean) -> "TabularMdp":
        return dataclasses.replace(self, cost_mean=cost_mean)

    def with_discount(self, discount: float) -> "TabularMdp":
        return dataclasses.replace(self, discount=discount)

    def describe(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "cost_mean": self.cost_mean.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }


def random_mdp(num_states: int, num_actions: int, discount: float,
               rng: np.random.Generator) -> TabularMdp:
    """Dirichlet(1) transition rows, uniform[0, 1] costs, uniform initial states."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    c = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    nu = np.full(num_states, 1.0 / num_states)
    return TabularMdp(P, c, discount, nu)


def _check_sa(mdp: TabularMdp, s: int, a: int) -> None:
    if not 0 <= s < mdp.num_states:
        raise ValueError(f"state {s} out of range [0, {mdp.num_states})")
    if not 0 <= a < mdp.num_actions:
        raise ValueError(f"action {a} out of range [0, {mdp.num_actions})")


def _sample_categorical(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def sample_transition(mdp: TabularMdp, s: int, a: int, rng: np.random.Generator) -> int:
    _check_sa(mdp, s, a)
    return _sample_categorical(mdp.transition[s, a], rng.random())


def sample_cost(mdp: TabularMdp, s: int, a: int, rng: np.random.Generator) -> float:
    _check_sa(mdp, s, a)
    sigma = mdp.cost_noise_std[s, a]
    mean = float(mdp.cost_mean[s, a])
    if sigma == 0.0:
        return mean
    return mean + float(sigma) * float(rng.standard_normal())


def sample_initial_state(mdp: TabularMdp, rng: np.random.Generator) -> int:
    return _sample_categorical(mdp.initial_dist, rng.random())


# --------------------------------------------------------------------------
# spaces and environments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Discrete:
    n: int

    def contains(self, action) -> bool:
        try:
            a = int(action)
        except (TypeError, ValueError):
            return False
        return a == action and 0 <= a < self.n

    @property
    def shape(self) -> tuple:
        return ()


@dataclass(frozen=True, eq=False)
class Box:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "low", _frozen(np.atleast_1d(self.low)))
        object.__setattr__(self, "high", _frozen(np.atleast_1d(self.high)))

    def contains(self, action) -> bool:
        a = np.asarray(action, dtype=float)
        return (a.shape == self.low.shape and bool(np.all(np.isfinite(a)))
                and bool(np.all(a >= self.low)) and bool(np.all(a <= self.high)))

    @property
    def shape(self) -> tuple:
        return self.low.shape

    def clip(self, action):
        return np.clip(action, self.low, self.high)


ActionSpace = Union[Discrete, Box]


class Env(ABC):
    """Episodic environment with a fixed horizon.

    Subclasses implement the pure pieces (``initial_state``, ``transition``,
    ``observe``); the stateful ``reset``/``step`` pair adds episode
    bookkeeping. Batched variants default to loops and are overridden by
    vectorized environments.
    """

    horizon: int
    action_space: ActionSpace
    observation_low: np.ndarray
    observation_high: np.ndarray

    def __init__(self):
        self._state = None
        self._t = 0
        self._over = True

    @property
    def observation_dim(self) -> int:
        return int(np.asarray(self.observation_low).shape[0])

    @abstractmethod
    def initial_state(self, rng: np.random.Generator):
        ...

    @abstractmethod
    def transition(self, state, action, rng: np.random.Generator):
        """Return ``(next_state, cost, terminal)``."""

    def observe(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float)

    # batched API: one rng per episode so a batch decomposes into episodes
    def initial_state_batch(self, rngs: Sequence[np.random.Generator]):
        return np.stack([np.asarray(self.initial_state(r)) for r in rngs])

    def transition_batch(self, states, actions, rngs):
        out = [self.transition(s, a, r) for s, a, r in zip(states, actions, rngs)]
        nxt = np.stack([np.asarray(o[0]) for o in out])
        cost = np.array([o[1] for o in out], dtype=float)
        term = np.array([o[2] for o in out], dtype=bool)
        return nxt, cost, term

    def observe_batch(self, states) -> np.ndarray:
        return np.stack([self.observe(s) for s in states])

    # stateful single-episode API
    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._state = self.initial_state(rng)
        self._t = 0
        self._over = False
        return self.observe(self._state)

    def step(self, action, rng: np.random.Generator):
        if self._over:
            raise ContractError("step() called on a finished episode; call reset() first")
        if not self.action_space.contains(action):
            raise ContractError(f"action {action!r} outside the action space")
        self._state, cost, terminal = self.transition(self._state, action, rng)
        self._t += 1
        if terminal or self._t >= self.horizon:
            self._over = True
        return self.observe(self._state), float(cost), bool(terminal)

    @property
    def steps_taken(self) -> int:
        return self._t


class TabularEnv(Env):
    """Episodic wrapper around a :class:`TabularMdp` with one-hot observations.

    ``terminal_states`` end an episode when entered; otherwise episodes run
    for ``horizon`` steps.
    """

    def __init__(self, mdp: TabularMdp, horizon: int, terminal_states=()):
        super().__init__()
        self.mdp = mdp
        self.horizon = int(horizon)
        self.terminal = np.zeros(mdp.num_states, dtype=bool)
        self.terminal[list(terminal_states)] = True
        self.action_space = Discrete(mdp.num_actions)
        self.observation_low = np.zeros(mdp.num_states)
        self.observation_high = np.ones(mdp.num_states)

    def initial_state(self, rng):
        return sample_initial_state(self.mdp, rng)

    def transition(self, state, action, rng):
        s, a = int(state), int(action)
        cost = sample_cost(self.mdp, s, a, rng)
        nxt = sample_transition(self.mdp, s, a, rng)
        return nxt, cost, bool(self.terminal[nxt])

    def transition_batch(self, states, actions, rngs):
        # per episode: cost noise (if any) then the transition draw, as in transition()
        s = np.asarray(states, dtype=int).reshape(-1)
        a = np.asarray(actions, dtype=int).reshape(-1)
        sigma = self.mdp.cost_noise_std[s, a]
        cost = np.array(self.mdp.cost_mean[s, a], dtype=float)
        u = np.empty(len(s))
        for i, r in enumerate(rngs):
            if sigma[i] != 0.0:
                cost[i] += sigma[i] * r.standard_normal()
            u[i] = r.random()
        cdf = np.cumsum(self.mdp.transition[s, a], axis=1)
        nxt = np.minimum((cdf <= u[:, None]).sum(axis=1), self.mdp.num_states - 1)
        return nxt, cost, self.terminal[nxt]

    def observe(self, state):
        obs = np.zeros(self.mdp.num_states)
        obs[int(state)] = 1.0
        return obs

    def observe_batch(self, states):
        states = np.asarray(states, dtype=int)
        obs = np.zeros((len(states), self.mdp.num_states))
        obs[np.arange(len(states)), states] = 1.0
        return obs


def state_index(obs) -> int:
    """Tabular state id from an integer or a one-hot observation."""
    arr = np.asarray(obs)
    if arr.ndim == 0:
        return int(arr)
    return int(np.argmax(arr))


# --------------------------------------------------------------------------
# policies
# --------------------------------------------------------------------------


class Policy(ABC):
    """Stationary stochastic policy over observations."""

    deterministic: bool = False

    @abstractmethod
    def act(self, obs, rng: np.random.Generator):
        ...

    @abstractmethod
    def action_log_prob(self, obs, action) -> float:
        ...

    def act_batch(self, obs_batch, rngs):
        return [self.act(o, r) for o, r in zip(obs_batch, rngs)]


class TabularPolicy(Policy):
    """Action probabilities per state, ``probs[s, a]``."""

    def __init__(self, probs):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 2 or np.any(probs < 0) or np.any(np.abs(probs.sum(1) - 1) > 1e-8):
            raise ValueError("probs must be an (S, A) row-stochastic array")
        probs.setflags(write=False)
        self.probs = probs
        self.deterministic = bool(np.all(probs.max(axis=1) == 1.0))

    @classmethod
    def from_actions(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @property
    def actions(self) -> np.ndarray:
        """Greedy action table (lowest index on ties)."""
        return np.argmax(self.probs, axis=1)

    def act(self, obs, rng):
        p = self.probs[state_index(obs)]
        if self.deterministic:
            return int(np.argmax(p))
        return _sample_categorical(p, rng.random())

    def act_batch(self, obs_batch, rngs):
        obs = np.asarray(obs_batch)
        ids = np.argmax(obs, axis=1) if obs.ndim == 2 else obs.astype(int)
        if self.deterministic:
            return list(np.argmax(self.probs[ids], axis=1))
        u = np.array([r.random() for r in rngs])
        cdf = np.cumsum(self.probs[ids], axis=1)
        return list(np.minimum((cdf <= u[:, None]).sum(axis=1), self.probs.shape[1] - 1))

    def action_log_prob(self, obs, action):
        p = self.probs[state_index(obs), int(action)]
        return float(np.log(p)) if p > 0 else -np.inf


class UniformPolicy(Policy):
    def __init__(self, action_space: ActionSpace):
        self.action_space = action_space

    def act(self, obs, rng):
        if isinstance(self.action_space, Discrete):
            return int(rng.integers(self.action_space.n))
        return rng.uniform(self.action_space.low, self.action_space.high)

    def action_log_prob(self, obs, action):
        if isinstance(self.action_space, Discrete):
            return -float(np.log(self.action_space.n))
        return -float(np.sum(np.log(self.action_space.high - self.action_space.low)))


class DegradedPolicy(Policy):
    """With probability ``p`` take a uniformly random action, else follow ``base``."""

    def __init__(self, base: Policy, p: float, action_space: ActionSpace):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.base = base
        self.p = float(p)
        self.uniform = UniformPolicy(action_space)
        self.deterministic = base.deterministic and self.p == 0.0

    def act(self, obs, rng):
        if self.p == 0.0:
            return self.base.act(obs, rng)
        if self.p == 1.0:
            return self.uniform.act(obs, rng)
        if rng.random() < self.p:
            return self.uniform.act(obs, rng)
        return self.base.act(obs, rng)

    def act_batch(self, obs_batch, rngs):
        if self.p == 0.0:
            return self.base.act_batch(obs_batch, rngs)
        out = [None] * len(rngs)
        rest = []
        for i, r in enumerate(rngs):
            if self.p == 1.0 or r.random() < self.p:
                out[i] = self.uniform.act(obs_batch[i], r)
            else:
                rest.append(i)
        if rest:
            base = self.base.act_batch(np.asarray(obs_batch)[rest], [rngs[i] for i in rest])
            for i, a in zip(rest, base):
                out[i] = a
        return out

    def action_log_prob(self, obs, action):
        if not isinstance(self.uniform.action_space, Discrete):
            raise NotImplementedError("mixture density only defined for discrete actions")
        n = self.uniform.action_space.n
        base_p = np.exp(self.base.action_log_prob(obs, action))
        p = self.p / n + (1.0 - self.p) * base_p
        return float(np.log(p)) if p > 0 else -np.inf


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


class Record(NamedTuple):
    t: int
    state: np.ndarray
    action: object
    cost: float
    shaped_cost: Optional[float]
    next_state: np.ndarray
    done: bool


def _as_rows(x, T: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if T == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim >= 2 else 0)
    return arr.reshape(T, -1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode stored column-wise; record ``t`` runs from 1 to ``T``.

    ``done`` marks a terminal transition (only ever the last record);
    ``truncated`` marks an episode cut at the horizon without terminating.
    """

    observations: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    next_observations: Optional[np.ndarray]
    dones: np.ndarray
    episode_id: int = 0
    truncated: bool = False
    shaped_costs: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.costs)
        obs = _as_rows(self.observations, T)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=float))
        object.__setattr__(self, "dones", np.asarray(self.dones, dtype=bool))
        object.__setattr__(self, "actions", np.asarray(self.actions))
        if self.next_observations is not None:
            object.__setattr__(self, "next_observations", _as_rows(self.next_observations, T))
        if self.shaped_costs is not None:
            object.__setattr__(self, "shaped_costs", np.asarray(self.shaped_costs, dtype=float))
        if len(self.actions) != T or len(self.dones) != T:
            raise ValueError("trajectory columns have mismatched lengths")
        if T and np.any(self.dones[:-1]):
            raise ValueError("done may only be set on the final record")
        if T and self.dones[-1] and self.truncated:
            raise ValueError("a terminated episode cannot also be truncated")

    def __len__(self) -> int:
        return len(self.costs)

    @property
    def total_steps(self) -> int:
        return len(self.costs)

    @property
    def terminated(self) -> bool:
        return bool(len(self) and self.dones[-1])

    def records(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield Record(
                t=i + 1,
                state=self.observations[i],
                action=self.actions[i].item() if self.actions.ndim == 1 else self.actions[i],
                cost=float(self.costs[i]),
                shaped_cost=None if self.shaped_costs is None else float(self.shaped_costs[i]),
                next_state=None if self.next_observations is None else self.next_observations[i],
                done=bool(self.dones[i]),
            )

    def with_shaped_costs(self, shaped) -> "Trajectory":
        return dataclasses.replace(self, shaped_costs=np.asarray(shaped, dtype=float))

    def final_observation(self) -> np.ndarray:
        if self.next_observations is None or not len(self):
            raise ValueError("trajectory has no next-state information")
        return self.next_observations[-1]


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """``sum_t gamma^(t-1) c_t`` over the recorded (raw) costs."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return float(np.dot(gamma ** np.arange(len(traj)), traj.costs))


def rollout(env: Env, policy: Policy, rng: np.random.Generator, episode_id: int = 0) -> Trajectory:
    """Run one episode of at most ``env.horizon`` steps; costs are unshaped."""
    obs = env.reset(rng)
    observations, actions, costs, nexts, dones = [], [], [], [], []
    done = False
    for _ in range(env.horizon):
        a = policy.act(obs, rng)
        if not env.action_space.contains(a):
            raise ContractError(f"policy emitted action {a!r} outside the action space")
        nxt, cost, done = env.step(a, rng)
        observations.append(obs)
        actions.append(a)
        costs.append(cost)
        nexts.append(nxt)
        dones.append(done)
        obs = nxt
        if done:
            break
    return Trajectory(
        observations=np.array(observations), actions=np.array(actions),
        costs=np.array(costs), next_observations=np.array(nexts),
        dones=np.array(dones), episode_id=episode_id, truncated=not done,
    )


def rollout_batch(env: Env, policy: Policy, rngs: Sequence[np.random.Generator],
                  first_episode_id: int = 0) -> list:
    """Run ``len(rngs)`` episodes in lockstep, episode ``i`` driven by ``rngs[i]``.

    Each episode consumes its own stream in the same order as :func:`rollout`
    (reset, then act/transition per step), so per-episode results do not
    depend on batch composition.
    """
    n = len(rngs)
    H = env.horizon
    states = np.array(env.initial_state_batch(rngs))
    obs = env.observe_batch(states)
    alive = np.ones(n, dtype=bool)
    lengths = np.zeros(n, dtype=int)
    act_shape = env.action_space.shape
    act_dtype = int if isinstance(env.action_space, Discrete) else float
    O = np.zeros((n, H, obs.shape[1]))
    NO = np.zeros((n, H, obs.shape[1]))
    Acts = np.zeros((n, H) + act_shape, dtype=act_dtype)
    C = np.zeros((n, H))
    D = np.zeros((n, H), dtype=bool)
    for t in range(H):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        sub_rngs = [rngs[i] for i in idx]
        acts = policy.act_batch(obs[idx], sub_rngs)
        for a in acts:
            if not env.action_space.contains(a):
                raise ContractError(f"policy emitted action {a!r} outside the action space")
        acts = np.asarray(acts, dtype=act_dtype).reshape((idx.size,) + act_shape)
        nxt, cost, term = env.transition_batch(states[idx], acts, sub_rngs)
        nobs = env.observe_batch(nxt)
        O[idx, t] = obs[idx]
        NO[idx, t] = nobs
        Acts[idx, t] = acts
        C[idx, t] = cost
        D[idx, t] = term
        states[idx] = nxt
        obs[idx] = nobs
        lengths[idx] += 1
        alive[idx[term]] = False
    trajs = []
    for i in range(n):
        T = lengths[i]
        trajs.append(Trajectory(
            observations=O[i, :T], actions=Acts[i, :T], costs=C[i, :T],
            next_observations=NO[i, :T], dones=D[i, :T],
            episode_id=first_episode_id + i, truncated=not (T and D[i, T - 1]),
        ))
    return trajs


def spawn_rngs(seed, n: int) -> list:
    """``n`` independent generators from child seed sequences of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(n)]


# --------------------------------------------------------------------------
# trajectory file format
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trajectories(path, trajs: Sequence[Trajectory]) -> None:
    """Line-delimited CSV: ``episode_id,t,s*,a*,cost,done,ns*`` with one header line."""
    if not trajs:
        raise ValueError("no trajectories to write")
    d = trajs[0].observations.shape[1]
    discrete = trajs[0].actions.ndim == 1 and np.issubdtype(trajs[0].actions.dtype, np.integer)
    m = 1 if trajs[0].actions.ndim == 1 else trajs[0].actions.shape[1]
    a_cols = ["a"] if discrete else [f"a{j}" for j in range(m)]
    header = (["episode_id", "t"] + [f"s{j}" for j in range(d)] + a_cols
              + ["cost", "done"] + [f"ns{j}" for j in range(d)])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for tr in trajs:
            if tr.observations.shape[1] != d:
                raise ValueError("all trajectories must share the observation dimension")
            for i in range(len(tr)):
                row = [str(tr.episode_id), str(i + 1)]
                row += [_fmt(x) for x in tr.observations[i]]
                if discrete:
                    row.append(str(int(tr.actions[i])))
                else:
                    row += [_fmt(x) for x in np.atleast_1d(tr.actions[i])]
                row += [_fmt(tr.costs[i]), "1" if tr.dones[i] else "0"]
                row += [_fmt(x) for x in tr.next_observations[i]]
                fh.write(",".join(row) + "\n")


def read_trajectories(path) -> list:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    d = sum(1 for h in header if h.startswith("s") and h[1:].isdigit())
    discrete = "a" in header
    m = 1 if discrete else sum(1 for h in header if h.startswith("a") and h[1:].isdigit())
    by_ep: dict = {}
    for r in rows:
        by_ep.setdefault(int(r[0]), []).append(r)
    trajs = []
    for ep, rs in by_ep.items():
        ts = [int(r[1]) for r in rs]
        if ts != list(range(1, len(rs) + 1)):
            raise ValueError(f"episode {ep}: timestamps must run 1..T")
        obs = np.array([[float(x) for x in r[2:2 + d]] for r in rs])
        if discrete:
            acts = np.array([int(r[2 + d]) for r in rs])
        else:
            acts = np.array([[float(x) for x in r[2 + d:2 + d + m]] for r in rs])
        off = 2 + d + m
        costs = np.array([float(r[off]) for r in rs])
        dones = np.array([r[off + 1] == "1" for r in rs])
        nxt = np.array([[float(x) for x in r[off + 2:off + 2 + d]] for r in rs])
        trajs.append(Trajectory(obs, acts, costs, nxt, dones, episode_id=ep,
                                truncated=not dones[-1]))
    return trajs
