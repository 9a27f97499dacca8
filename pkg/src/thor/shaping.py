"""Potential-based cost shaping: ``c' = c + gamma * phi(s') - phi(s)``.

Shaping leaves the set of optimal policies unchanged and shifts optimal
values by ``-phi``. Episodic terminals are absorbing with zero potential
unless ``zero_terminal=False``.
"""
from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .errors import NumericError
from .mdp import TabularMdp, Trajectory, state_index


class Potential:
    """State -> real mapping in units of discounted cost-to-go."""

    source = "generic"

    def evaluate(self, state) -> float:
        raise NotImplementedError

    def evaluate_batch(self, states) -> np.ndarray:
        return np.array([self.evaluate(s) for s in states], dtype=float)

    def __call__(self, state) -> float:
        return self.evaluate(state)

    def table(self, num_states: int) -> np.ndarray:
        """Values at every tabular state id."""
        return np.array([self.evaluate(s) for s in range(num_states)], dtype=float)


class ZeroPotential(Potential):
    source = "zero"

    def evaluate(self, state):
        return 0.0

    def evaluate_batch(self, states):
        return np.zeros(len(states))


class TabularPotential(Potential):
    """Per-state values; accepts integer ids or one-hot observations."""

    def __init__(self, values, source: str = "table"):
        values = np.array(values, dtype=float)
        values.setflags(write=False)
        self.values = values
        self.source = source

    def evaluate(self, state):
        return float(self.values[state_index(state)])

    def evaluate_batch(self, states):
        states = np.asarray(states)
        if states.ndim == 1 and np.issubdtype(states.dtype, np.integer):
            return self.values[states].astype(float)
        if states.ndim == 2:
            return self.values[np.argmax(states, axis=1)]
        return super().evaluate_batch(states)

    def table(self, num_states):
        if len(self.values) != num_states:
            raise ValueError("potential table size does not match the MDP")
        return np.array(self.values)


class FunctionPotential(Potential):
    def __init__(self, fn: Callable, batch_fn: Optional[Callable] = None, source: str = "function"):
        self.fn = fn
        self.batch_fn = batch_fn
        self.source = source

    def evaluate(self, state):
        return float(self.fn(state))

    def evaluate_batch(self, states):
        if self.batch_fn is not None:
            return np.asarray(self.batch_fn(np.asarray(states)), dtype=float)
        return super().evaluate_batch(states)


def _finite(x: float, what: str) -> float:
    if not math.isfinite(x):
        raise NumericError(f"non-finite potential at {what}: {x}")
    return x


def shape_cost(c: float, potential: Potential, gamma: float, s, s_next) -> float:
    phi_s = _finite(potential.evaluate(s), "s")
    phi_n = _finite(potential.evaluate(s_next), "s'")
    return c + gamma * phi_n - phi_s


def reshape_trajectory(traj: Trajectory, potential: Potential, gamma: float,
                       zero_terminal: bool = True) -> Trajectory:
    """Fill ``shaped_costs``; raw costs are kept as they are."""
    if traj.next_observations is None:
        raise ValueError("trajectory lacks next states; cannot reshape")
    if len(traj) == 0:
        return traj.with_shaped_costs(np.zeros(0))
    phi_s = potential.evaluate_batch(traj.observations)
    phi_n = potential.evaluate_batch(traj.next_observations)
    if not (np.all(np.isfinite(phi_s)) and np.all(np.isfinite(phi_n))):
        raise NumericError("non-finite potential along trajectory")
    if zero_terminal:
        phi_n = np.where(traj.dones, 0.0, phi_n)
    return traj.with_shaped_costs(traj.costs + gamma * phi_n - phi_s)


def telescoping_check(traj: Trajectory, potential: Potential, gamma: float,
                      zero_terminal: bool = True):
    """Both sides of the shaped-return identity for one full episode.

    ``lhs = sum_t gamma^(t-1) c'_t`` and
    ``rhs = sum_t gamma^(t-1) c_t - phi(s_1) + gamma^T phi(s_{T+1})``.
    """
    shaped = traj if traj.shaped_costs is not None else reshape_trajectory(
        traj, potential, gamma, zero_terminal)
    T = len(traj)
    disc = gamma ** np.arange(T)
    lhs = float(np.dot(disc, shaped.shaped_costs))
    phi_end = 0.0 if (zero_terminal and traj.terminated) else potential.evaluate(traj.final_observation())
    rhs = float(np.dot(disc, traj.costs)) - potential.evaluate(traj.observations[0]) + gamma ** T * phi_end
    return lhs, rhs


def expected_shaped_costs(mdp: TabularMdp, potential) -> np.ndarray:
    """``c(s,a) + gamma * E[phi(s')] - phi(s)`` as an (S, A) array."""
    phi = _table(mdp, potential)
    return mdp.cost_mean + mdp.discount * mdp.transition @ phi - phi[:, None]


def _table(mdp: TabularMdp, potential) -> np.ndarray:
    if isinstance(potential, Potential):
        phi = potential.table(mdp.num_states)
    else:
        phi = np.asarray(potential, dtype=float)
    if phi.shape != (mdp.num_states,) or not np.all(np.isfinite(phi)):
        raise NumericError("potential must be finite at every state")
    return phi


class ShapedMdp:
    """A tabular MDP with costs replaced by their expected shaped values."""

    def __init__(self, base: TabularMdp, potential):
        self.base = base
        self.potential = potential
        self.phi = _table(base, potential)
        self.mdp = base.with_costs(expected_shaped_costs(base, self.phi))

    @property
    def cost_mean(self) -> np.ndarray:
        return self.mdp.cost_mean
