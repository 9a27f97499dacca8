"""Scripted experts: grid value iteration on each task's own dynamics.

Grids (nodes per axis) and planning costs:

* mountain_car: position x velocity, 121 x 121; cost 1 per step to the goal.
* acrobot: two periodic angles x two velocities, 17^4; cost 1 per step to
  the raised-tip goal, planned over 2-step macro actions.
* cartpole_sparse: 4 physical variables, 13^4; cost 1 on falling, planned
  over 5-step macro actions.
* pendulum_sparse: periodic angle x velocity, 121 x 121 with torques
  {-2, -1, 0, 1, 2}; cost 1 per step to the upright goal region.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np

from ..mdp import DegradedPolicy, Discrete, Policy
from .classic import Acrobot, CartPoleSparse, MountainCar, PendulumSparse, make_env
from .grid import Grid, GridPlan, grid_value_iteration, lookahead_actions


@dataclass(frozen=True)
class PlannerSpec:
    grid: Grid
    actions: tuple
    discount: float
    repeat: int = 1


def _macro(dynamics: Callable, cost_fn: Callable, repeat: int, discount: float):
    """``repeat`` applications of one action with discounted cost accumulation."""
    if repeat == 1:
        return dynamics, cost_fn

    def macro_dyn(s, a):
        for _ in range(repeat):
            s = dynamics(s, a)
        return s

    def macro_cost(s, a, _nxt):
        total = np.zeros(len(s))
        done = np.zeros(len(s), dtype=bool)
        g = 1.0
        for _ in range(repeat):
            n = dynamics(s, a)
            c, term = cost_fn(s, a, n)
            total += np.where(done, 0.0, g * c)
            done |= term
            s = n
            g *= discount
        return total, done

    return macro_dyn, macro_cost


def _planning_model(name: str):
    env = make_env(name)
    if isinstance(env, MountainCar):
        p = env.p
        grid = Grid((p.min_position, -p.max_speed), (p.max_position, p.max_speed), (121, 121), (False, False))
        spec = PlannerSpec(grid, (0, 1, 2), 0.999)
        cost = lambda s, a, n: (np.ones(len(n)), env.at_goal(n))
    elif isinstance(env, Acrobot):
        grid = Grid((-np.pi, -np.pi, -2 * np.pi, -4 * np.pi), (np.pi, np.pi, 2 * np.pi, 4 * np.pi),
                    (17, 17, 17, 17), (True, True, False, False))
        spec = PlannerSpec(grid, (0, 1, 2), 0.99, repeat=2)
        cost = lambda s, a, n: (np.ones(len(n)), env.tip_height(n) > 1.0)
    elif isinstance(env, CartPoleSparse):
        p = env.p
        grid = Grid((-p.x_threshold, -2.0, -p.theta_threshold, -2.5),
                    (p.x_threshold, 2.0, p.theta_threshold, 2.5), (13, 13, 13, 13), (False,) * 4)
        spec = PlannerSpec(grid, (0, 1), 0.98, repeat=5)
        cost = lambda s, a, n: (np.where(env.failed(n), 1.0, 0.0), env.failed(n))
    elif isinstance(env, PendulumSparse):
        p = env.p
        grid = Grid((-np.pi, -p.max_speed), (np.pi, p.max_speed), (121, 121), (True, False))
        torques = tuple(np.array([t]) for t in (-2.0, -1.0, 0.0, 1.0, 2.0))
        spec = PlannerSpec(grid, torques, 0.99)
        cost = lambda s, a, n: (np.ones(len(n)), env.at_goal(n))
    else:  # pragma: no cover - make_env already rejects unknown names
        raise ValueError(name)
    dyn, cst = _macro(env.dynamics, cost, spec.repeat, spec.discount)
    return env, spec, dyn, cst


class GridExpertPolicy(Policy):
    """Deterministic one-step lookahead on a solved grid model."""

    deterministic = True

    def __init__(self, plan: GridPlan, dynamics: Callable, cost_fn: Callable, discrete: bool):
        self.plan = plan
        self.dynamics = dynamics
        self.cost_fn = cost_fn
        self.discrete = discrete

    def _choose(self, obs_batch):
        idx = lookahead_actions(self.plan, obs_batch, self.dynamics, self.cost_fn)
        return [int(self.plan.actions[i]) if self.discrete else np.array(self.plan.actions[i], dtype=float)
                for i in idx]

    def act(self, obs, rng):
        return self._choose(np.asarray(obs, dtype=float)[None, :])[0]

    def act_batch(self, obs_batch, rngs):
        return self._choose(np.asarray(obs_batch, dtype=float))

    def action_log_prob(self, obs, action):
        chosen = self.act(obs, None)
        same = chosen == action if self.discrete else np.allclose(chosen, action)
        return 0.0 if same else -np.inf


@lru_cache(maxsize=None)
def _optimal(name: str) -> GridExpertPolicy:
    env, spec, dyn, cst = _planning_model(name)
    plan = grid_value_iteration(spec.grid, spec.actions, dyn, cst, spec.discount)
    return GridExpertPolicy(plan, dyn, cst, isinstance(env.action_space, Discrete))


def parse_quality(quality) -> float:
    """``"optimal"`` -> 0, ``"degraded(p)"`` or a bare number -> p."""
    if isinstance(quality, (int, float)):
        return float(quality)
    q = str(quality).strip().lower()
    if q == "optimal":
        return 0.0
    if q.startswith("degraded(") and q.endswith(")"):
        return float(q[len("degraded("):-1])
    raise ValueError(f"unrecognized expert quality {quality!r}")


def scripted_expert(name: str, quality: Union[str, float] = "optimal") -> Policy:
    """Grid-planned expert for ``name``; ``degraded(p)`` acts uniformly at random w.p. ``p``."""
    p = parse_quality(quality)
    env = make_env(name)
    base = _optimal(name)
    if p == 0.0:
        return base
    space = env.torque_space if isinstance(env, PendulumSparse) else env.action_space
    return DegradedPolicy(base, p, space)
