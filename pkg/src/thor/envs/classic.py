"""Classic-control tasks with vectorized dynamics.

Internal state rows are float arrays; observations are the physical state
(angles wrapped to [-pi, pi]) clipped to the declared box. Constants follow
the usual classic-control parameterizations and sit in one config dataclass
per task.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, NumericError
from ..mdp import Box, Discrete, Env


def wrap_angle(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


class ClassicControlEnv(Env):
    """Shared machinery: subclasses provide ``dynamics`` and ``_cost_and_done``."""

    name = "classic"
    sparse = True

    def __init__(self, horizon: int, seed=None):
        super().__init__()
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = int(horizon)
        self.seed = seed

    # -- pure pieces -------------------------------------------------------
    def dynamics(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cost_and_done(self, states, actions, nxt):
        raise NotImplementedError

    def _initial_row(self, rng) -> np.ndarray:
        raise NotImplementedError

    def physics_step(self, state, action) -> np.ndarray:
        """One deterministic integration step for a single state."""
        nxt = self.dynamics(np.asarray(state, dtype=float)[None, :], np.asarray([action]))[0]
        if not np.all(np.isfinite(nxt)):
            raise NumericError(f"{self.name}: non-finite state {nxt}")
        return nxt

    def initial_state(self, rng):
        return self._initial_row(rng)

    def initial_state_batch(self, rngs):
        return np.stack([self._initial_row(r) for r in rngs])

    def transition(self, state, action, rng):
        nxt, cost, done = self.transition_batch(np.asarray(state, dtype=float)[None, :],
                                                np.asarray([action]), None)
        return nxt[0], float(cost[0]), bool(done[0])

    def transition_batch(self, states, actions, rngs):
        states = np.asarray(states, dtype=float)
        nxt = self.dynamics(states, np.asarray(actions))
        if not np.all(np.isfinite(nxt)):
            raise NumericError(f"{self.name}: simulation produced non-finite state")
        cost, done = self._cost_and_done(states, actions, nxt)
        return nxt, cost, done

    def observe(self, state):
        return self.observe_batch(np.asarray(state, dtype=float)[None, :])[0]

    def observe_batch(self, states):
        obs = np.asarray(states, dtype=float)[:, : self.observation_dim]
        return np.clip(obs, self.observation_low, self.observation_high)

    def default_rng(self):
        return np.random.default_rng(self.seed)


# --------------------------------------------------------------------------
# mountain car
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MountainCarParams:
    min_position: float = -1.2
    max_position: float = 0.6
    max_speed: float = 0.07
    goal_position: float = 0.5
    goal_velocity: float = 0.0
    force: float = 0.001
    gravity: float = 0.0025
    start_low: float = -0.6
    start_high: float = -0.4


class MountainCar(ClassicControlEnv):
    """Under-powered car in a valley; cost 1 per step until the goal is reached.

    Actions: 0 push left, 1 coast, 2 push right.
    """

    name = "mountain_car"

    def __init__(self, horizon: int = 200, seed=None, params: MountainCarParams = MountainCarParams()):
        super().__init__(horizon, seed)
        self.p = params
        self.action_space = Discrete(3)
        self.observation_low = np.array([params.min_position, -params.max_speed])
        self.observation_high = np.array([params.max_position, params.max_speed])

    def _initial_row(self, rng):
        return np.array([rng.uniform(self.p.start_low, self.p.start_high), 0.0])

    def dynamics(self, states, actions):
        p = self.p
        pos, vel = states[:, 0], states[:, 1]
        a = np.asarray(actions, dtype=float).reshape(-1)
        vel = vel + (a - 1.0) * p.force - np.cos(3 * pos) * p.gravity
        vel = np.clip(vel, -p.max_speed, p.max_speed)
        pos = np.clip(pos + vel, p.min_position, p.max_position)
        vel = np.where((pos == p.min_position) & (vel < 0), 0.0, vel)
        return np.stack([pos, vel], axis=1)

    def at_goal(self, states):
        return (states[:, 0] >= self.p.goal_position) & (states[:, 1] >= self.p.goal_velocity)

    def _cost_and_done(self, states, actions, nxt):
        return np.ones(len(nxt)), self.at_goal(nxt)

    @staticmethod
    def height(pos):
        return np.sin(3 * np.asarray(pos))


# --------------------------------------------------------------------------
# acrobot
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AcrobotParams:
    dt: float = 0.2
    link_length_1: float = 1.0
    link_mass_1: float = 1.0
    link_mass_2: float = 1.0
    link_com_1: float = 0.5
    link_com_2: float = 0.5
    link_moi: float = 1.0
    max_vel_1: float = 4 * np.pi
    max_vel_2: float = 9 * np.pi
    gravity: float = 9.8
    torques: tuple = (-1.0, 0.0, 1.0)
    init_range: float = 0.1


class Acrobot(ClassicControlEnv):
    """Two-link underactuated pendulum; cost 1 per step until the tip is raised
    one link length above the pivot. RK4 at a fixed timestep.

    State: ``[theta1, theta2, dtheta1, dtheta2]`` with angles from the hanging
    position.
    """

    name = "acrobot"

    def __init__(self, horizon: int = 500, seed=None, params: AcrobotParams = AcrobotParams(),
                 clip_velocity: bool = True):
        super().__init__(horizon, seed)
        self.p = params
        self.clip_velocity = clip_velocity
        self.action_space = Discrete(len(params.torques))
        self.observation_low = np.array([-np.pi, -np.pi, -params.max_vel_1, -params.max_vel_2])
        self.observation_high = -self.observation_low

    def _initial_row(self, rng):
        return rng.uniform(-self.p.init_range, self.p.init_range, size=4)

    def _derivs(self, s, torque):
        p = self.p
        m1, m2, l1 = p.link_mass_1, p.link_mass_2, p.link_length_1
        lc1, lc2, I1, I2, g = p.link_com_1, p.link_com_2, p.link_moi, p.link_moi, p.gravity
        t1, t2, dt1, dt2 = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
        d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * np.cos(t2)) + I1 + I2
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(t2)) + I2
        phi2 = m2 * lc2 * g * np.cos(t1 + t2 - np.pi / 2)
        phi1 = (-m2 * l1 * lc2 * dt2 ** 2 * np.sin(t2)
                - 2 * m2 * l1 * lc2 * dt2 * dt1 * np.sin(t2)
                + (m1 * lc1 + m2 * l1) * g * np.cos(t1 - np.pi / 2) + phi2)
        ddt2 = ((torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1 ** 2 * np.sin(t2) - phi2)
                / (m2 * lc2 ** 2 + I2 - d2 ** 2 / d1))
        ddt1 = -(d2 * ddt2 + phi1) / d1
        return np.stack([dt1, dt2, ddt1, ddt2], axis=1)

    def dynamics(self, states, actions):
        p = self.p
        torque = np.asarray(p.torques)[np.asarray(actions, dtype=int).reshape(-1)]
        s, h = states, p.dt
        k1 = self._derivs(s, torque)
        k2 = self._derivs(s + h / 2 * k1, torque)
        k3 = self._derivs(s + h / 2 * k2, torque)
        k4 = self._derivs(s + h * k3, torque)
        ns = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ns[:, 0] = wrap_angle(ns[:, 0])
        ns[:, 1] = wrap_angle(ns[:, 1])
        if self.clip_velocity:
            ns[:, 2] = np.clip(ns[:, 2], -p.max_vel_1, p.max_vel_1)
            ns[:, 3] = np.clip(ns[:, 3], -p.max_vel_2, p.max_vel_2)
        return ns

    def tip_height(self, states):
        return -np.cos(states[:, 0]) - np.cos(states[:, 0] + states[:, 1])

    def _cost_and_done(self, states, actions, nxt):
        return np.ones(len(nxt)), self.tip_height(nxt) > 1.0

    def energy(self, state) -> float:
        """Total mechanical energy (kinetic + gravitational)."""
        p = self.p
        m1, m2, l1 = p.link_mass_1, p.link_mass_2, p.link_length_1
        lc1, lc2, I1, I2, g = p.link_com_1, p.link_com_2, p.link_moi, p.link_moi, p.gravity
        t1, t2, dt1, dt2 = np.asarray(state, dtype=float)
        d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * np.cos(t2)) + I1 + I2
        d2 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(t2)) + I2
        d3 = m2 * lc2 ** 2 + I2
        kin = 0.5 * (d1 * dt1 ** 2 + 2 * d2 * dt1 * dt2 + d3 * dt2 ** 2)
        pot = -(m1 * lc1 + m2 * l1) * g * np.cos(t1) - m2 * lc2 * g * np.cos(t1 + t2)
        return float(kin + pot)


# --------------------------------------------------------------------------
# cart-pole with a survival-only signal
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * np.pi / 360
    init_range: float = 0.05


class CartPoleSparse(ClassicControlEnv):
    """Pole balancing where the only signal is a cost of -1 for surviving all
    ``H`` steps (``cost_scheme="sparse"``); failure ends the episode at cost 0.
    ``cost_scheme="dense"`` gives -1 per surviving step instead.

    The internal state carries the step count as a fifth column, since the
    success cost depends on it; observations are the four physical variables.
    """

    name = "cartpole_sparse"

    def __init__(self, horizon: int = 200, seed=None, params: CartPoleParams = CartPoleParams(),
                 cost_scheme: str = "sparse"):
        super().__init__(horizon, seed)
        if cost_scheme not in ("sparse", "dense"):
            raise ValueError(f"unknown cost scheme {cost_scheme!r}")
        self.p = params
        self.cost_scheme = cost_scheme
        self.sparse = cost_scheme == "sparse"
        self.action_space = Discrete(2)
        self.observation_low = np.array([-2 * params.x_threshold, -10.0, -2 * params.theta_threshold, -10.0])
        self.observation_high = -self.observation_low

    def _initial_row(self, rng):
        return np.concatenate([rng.uniform(-self.p.init_range, self.p.init_range, size=4), [0.0]])

    def dynamics(self, states, actions):
        p = self.p
        x, x_dot, th, th_dot = states[:, 0], states[:, 1], states[:, 2], states[:, 3]
        force = np.where(np.asarray(actions).reshape(-1) == 1, p.force_mag, -p.force_mag)
        cos, sin = np.cos(th), np.sin(th)
        total = p.mass_cart + p.mass_pole
        pml = p.mass_pole * p.half_length
        temp = (force + pml * th_dot ** 2 * sin) / total
        th_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.mass_pole * cos ** 2 / total))
        x_acc = temp - pml * th_acc * cos / total
        out = np.empty_like(states)
        out[:, 0] = x + p.tau * x_dot
        out[:, 1] = x_dot + p.tau * x_acc
        out[:, 2] = th + p.tau * th_dot
        out[:, 3] = th_dot + p.tau * th_acc
        if states.shape[1] > 4:
            out[:, 4] = states[:, 4] + 1
        return out

    def is_success(self, traj) -> bool:
        if self.cost_scheme == "dense":
            return not traj.terminated
        return bool(traj.costs.sum() < 0)

    def failed(self, states):
        p = self.p
        return (np.abs(states[:, 0]) > p.x_threshold) | (np.abs(states[:, 2]) > p.theta_threshold)

    def _cost_and_done(self, states, actions, nxt):
        fail = self.failed(nxt)
        if self.cost_scheme == "dense":
            return np.where(fail, 0.0, -1.0), fail
        survived = (~fail) & (nxt[:, 4] >= self.horizon)
        return np.where(survived, -1.0, 0.0), fail | survived


# --------------------------------------------------------------------------
# torque-limited pendulum swing-up, continuous action
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PendulumParams:
    max_speed: float = 8.0
    max_torque: float = 2.0
    dt: float = 0.05
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    goal_angle: float = 0.2
    goal_speed: float = 1.0


class PendulumSparse(ClassicControlEnv):
    """Swing a torque-limited pendulum up (angle 0 is upright).

    Sparse scheme: reaching ``|theta| <= goal_angle`` with ``|theta_dot| <=
    goal_speed`` ends the episode at cost -1; every other step costs 0. The
    action is a torque command saturated at ``max_torque``.
    """

    name = "pendulum_sparse"

    def __init__(self, horizon: int = 200, seed=None, params: PendulumParams = PendulumParams(),
                 cost_scheme: str = "sparse"):
        super().__init__(horizon, seed)
        if cost_scheme not in ("sparse", "dense"):
            raise ValueError(f"unknown cost scheme {cost_scheme!r}")
        self.p = params
        self.cost_scheme = cost_scheme
        self.sparse = cost_scheme == "sparse"
        self.action_space = Box(np.array([-np.inf]), np.array([np.inf]))
        self.torque_space = Box(np.array([-params.max_torque]), np.array([params.max_torque]))
        self.observation_low = np.array([-np.pi, -params.max_speed])
        self.observation_high = -self.observation_low

    def _initial_row(self, rng):
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def dynamics(self, states, actions):
        p = self.p
        th, th_dot = states[:, 0], states[:, 1]
        u = np.clip(np.asarray(actions, dtype=float).reshape(len(states), -1)[:, 0], -p.max_torque, p.max_torque)
        th_dot = th_dot + (3 * p.gravity / (2 * p.length) * np.sin(th)
                           + 3.0 / (p.mass * p.length ** 2) * u) * p.dt
        th_dot = np.clip(th_dot, -p.max_speed, p.max_speed)
        th = wrap_angle(th + th_dot * p.dt)
        return np.stack([th, th_dot], axis=1)

    def at_goal(self, states):
        return (np.abs(states[:, 0]) <= self.p.goal_angle) & (np.abs(states[:, 1]) <= self.p.goal_speed)

    def _cost_and_done(self, states, actions, nxt):
        goal = self.at_goal(nxt)
        if self.cost_scheme == "dense":
            u = np.clip(np.asarray(actions, dtype=float).reshape(len(states), -1)[:, 0],
                        -self.p.max_torque, self.p.max_torque)
            th = wrap_angle(states[:, 0])
            return th ** 2 + 0.1 * states[:, 1] ** 2 + 0.001 * u ** 2, np.zeros(len(nxt), dtype=bool)
        return np.where(goal, -1.0, 0.0), goal


ENV_NAMES = ("mountain_car", "acrobot", "cartpole_sparse", "pendulum_sparse")
_DEFAULT_H = {"mountain_car": 200, "acrobot": 500, "cartpole_sparse": 200, "pendulum_sparse": 200}


def make_env(name: str, horizon=None, seed=None, **kwargs) -> ClassicControlEnv:
    """Build a task by name with its default physics."""
    classes = {"mountain_car": MountainCar, "acrobot": Acrobot,
               "cartpole_sparse": CartPoleSparse, "pendulum_sparse": PendulumSparse}
    if name not in classes:
        raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")
    h = _DEFAULT_H[name] if horizon is None else int(horizon)
    return classes[name](horizon=h, seed=seed, **kwargs)


def check_action(env: Env, action):
    if not env.action_space.contains(action):
        raise ContractError(f"invalid action {action!r} for {getattr(env, 'name', env)}")
