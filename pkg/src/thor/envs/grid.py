"""Value iteration on a grid discretization of a deterministic continuous task.

Each grid node is pushed through the exact dynamics for every action and
the successor is spread over its enclosing grid cell with multilinear
weights, which yields a sparse stochastic matrix per action. Continuous
states are then controlled by a one-step lookahead against the
interpolated value function.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Regular grid; periodic axes cover ``[low, high)`` with ``n`` nodes."""

    low: tuple
    high: tuple
    sizes: tuple
    periodic: tuple

    def __post_init__(self):
        if not (len(self.low) == len(self.high) == len(self.sizes) == len(self.periodic)):
            raise ValueError("grid axis descriptors differ in length")
        if any(n < 2 for n in self.sizes):
            raise ValueError("each axis needs at least 2 nodes")

    @property
    def ndim(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.sizes))

    def spacing(self, d: int) -> float:
        span = self.high[d] - self.low[d]
        return span / self.sizes[d] if self.periodic[d] else span / (self.sizes[d] - 1)

    def axis(self, d: int) -> np.ndarray:
        return self.low[d] + self.spacing(d) * np.arange(self.sizes[d])

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(d) for d in range(self.ndim)], indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def interpolation(self, x: np.ndarray):
        """Corner indices ``(m, 2^d)`` and weights ``(m, 2^d)`` for points ``x``."""
        x = np.asarray(x, dtype=float)
        m = x.shape[0]
        lo_idx, frac = [], []
        for d in range(self.ndim):
            n, h = self.sizes[d], self.spacing(d)
            u = (x[:, d] - self.low[d]) / h
            if self.periodic[d]:
                i = np.floor(u)
                t = u - i
                i = i.astype(int) % n
                lo_idx.append((i, (i + 1) % n))
            else:
                u = np.clip(u, 0.0, n - 1.0)
                i = np.minimum(np.floor(u).astype(int), n - 2)
                t = u - i
                lo_idx.append((i, i + 1))
            frac.append(t)
        strides = np.cumprod((1,) + tuple(self.sizes[::-1]))[:-1][::-1]
        corners = list(product((0, 1), repeat=self.ndim))
        idx = np.zeros((m, len(corners)), dtype=np.int64)
        w = np.ones((m, len(corners)))
        for c, bits in enumerate(corners):
            for d, b in enumerate(bits):
                idx[:, c] += lo_idx[d][b] * strides[d]
                w[:, c] *= frac[d] if b else 1.0 - frac[d]
        return idx, w

    def interpolate(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        idx, w = self.interpolation(x)
        return np.sum(values[idx] * w, axis=1)


@dataclass
class GridPlan:
    grid: Grid
    actions: np.ndarray
    values: np.ndarray
    discount: float
    iterations: int
    residual: float


def grid_value_iteration(grid: Grid, actions: Sequence, dynamics: Callable,
                         cost_fn: Callable, discount: float, tol: float = 1e-6,
                         max_iterations: int = 100_000) -> GridPlan:
    """Solve the interpolated model.

    ``dynamics(states, actions) -> next_states`` and
    ``cost_fn(states, actions, next_states) -> (cost, terminal)`` are
    vectorized over rows. Terminal successors contribute zero value.
    """
    nodes = grid.nodes()
    N = nodes.shape[0]
    mats, costs = [], []
    for a in actions:
        acts = np.repeat(np.asarray([a]), N, axis=0)
        nxt = dynamics(nodes, acts)
        c, term = cost_fn(nodes, acts, nxt)
        idx, w = grid.interpolation(nxt)
        w = w * (~np.asarray(term, dtype=bool))[:, None]
        rows = np.repeat(np.arange(N), idx.shape[1])
        mats.append(sp.csr_matrix((w.reshape(-1), (rows, idx.reshape(-1))), shape=(N, N)))
        costs.append(np.asarray(c, dtype=float))
    V = np.zeros(N)
    residual = np.inf
    it = 0
    while it < max_iterations:
        it += 1
        Q = np.stack([c + discount * (P @ V) for P, c in zip(mats, costs)], axis=1)
        nv = Q.min(axis=1)
        residual = float(np.max(np.abs(nv - V)))
        V = nv
        if residual <= tol:
            break
    return GridPlan(grid, np.asarray(actions), V, discount, it, residual)


def lookahead_actions(plan: GridPlan, states: np.ndarray, dynamics: Callable,
                      cost_fn: Callable) -> np.ndarray:
    """Index of the action minimizing ``c + gamma * V_interp(s')``; ties go low."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    m = states.shape[0]
    q = np.empty((m, len(plan.actions)))
    for j, a in enumerate(plan.actions):
        acts = np.repeat(np.asarray([a]), m, axis=0)
        nxt = dynamics(states, acts)
        c, term = cost_fn(states, acts, nxt)
        v = np.where(term, 0.0, plan.grid.interpolate(plan.values, nxt))
        q[:, j] = c + plan.discount * v
    return np.argmin(q, axis=1)
