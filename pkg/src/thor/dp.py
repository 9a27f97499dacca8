"""Exact dynamic programming on tabular MDPs and numerical theorem checks.

Covers value iteration, exact policy evaluation, disadvantages, oracle-induced
and k-step lookahead policies, the k-step disadvantage, the two-line chain
that makes one-step greedy imitation fail, and verifiers for the one-step
lower bound and the k-step upper bound ``2 gamma^k eps / (1 - gamma^k)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericError
from .mdp import Policy, TabularMdp, TabularPolicy, random_mdp
from .shaping import Potential, TabularPotential

HOLD_TOL = 1e-9


@dataclass(frozen=True)
class ValueTable:
    values: np.ndarray
    tolerance: float = 0.0
    iterations: int = 0

    def __getitem__(self, s):
        return self.values[s]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class QTable:
    values: np.ndarray

    def __getitem__(self, idx):
        return self.values[idx]

    def greedy(self, tie_tol: float = 0.0) -> TabularPolicy:
        return TabularPolicy.from_actions(greedy_actions(self.values, tie_tol), self.values.shape[1])


@dataclass
class TheoremReport:
    gap_observed: float
    bound_value: float
    holds: bool
    parameters: dict = field(default_factory=dict)
    gaps: list = field(default_factory=list)
    kind: str = "upper"


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def greedy_actions(q: np.ndarray, tie_tol: float = 0.0) -> np.ndarray:
    """Row-wise argmin with lowest-index tie-break within ``tie_tol``."""
    q = np.asarray(q)
    if tie_tol <= 0.0:
        return np.argmin(q, axis=1)
    best = q.min(axis=1, keepdims=True)
    return np.argmax(q <= best + tie_tol, axis=1)


def _values(v) -> np.ndarray:
    if isinstance(v, ValueTable):
        return np.asarray(v.values, dtype=float)
    if isinstance(v, Potential):
        raise TypeError("pass potential.table(S) or use _potential_values")
    return np.asarray(v, dtype=float)


def _potential_values(mdp: TabularMdp, v) -> np.ndarray:
    if isinstance(v, Potential):
        vals = v.table(mdp.num_states)
    else:
        vals = _values(v)
    if vals.shape != (mdp.num_states,) or not np.all(np.isfinite(vals)):
        raise NumericError("oracle values must be finite at every state")
    return vals


def policy_matrix(mdp: TabularMdp, policy) -> np.ndarray:
    """(S, A) action probabilities for a tabular or generic policy."""
    if isinstance(policy, TabularPolicy):
        probs = policy.probs
    elif isinstance(policy, np.ndarray) and policy.ndim == 2:
        probs = policy
    elif isinstance(policy, np.ndarray) and policy.ndim == 1:
        probs = TabularPolicy.from_actions(policy, mdp.num_actions).probs
    elif isinstance(policy, Policy):
        probs = np.array([[math.exp(policy.action_log_prob(s, a)) for a in range(mdp.num_actions)]
                          for s in range(mdp.num_states)])
    else:
        raise TypeError(f"cannot interpret {type(policy).__name__} as a tabular policy")
    if probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError("policy does not cover every state/action")
    return probs


def q_from_v(mdp: TabularMdp, v) -> np.ndarray:
    return mdp.cost_mean + mdp.discount * (mdp.transition @ _values(v))


def bellman_residual(mdp: TabularMdp, v) -> float:
    v = _values(v)
    return float(np.max(np.abs(q_from_v(mdp, v).min(axis=1) - v)))


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------


def vi_iteration_bound(mdp: TabularMdp, tol: float) -> int:
    g, cmax = mdp.discount, mdp.max_abs_cost
    if g == 0.0 or cmax == 0.0 or tol * (1 - g) >= cmax:
        return 1
    return math.ceil(math.log(tol * (1 - g) / cmax) / math.log(g)) + 1


def value_iteration(mdp: TabularMdp, tol: float = 1e-10):
    """Optimal values and Q-values; the returned table has Bellman residual <= tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not np.all(np.isfinite(mdp.cost_mean)):
        raise NumericError("non-finite costs")
    v = np.zeros(mdp.num_states)
    limit = vi_iteration_bound(mdp, tol)
    it = 0
    while True:
        it += 1
        v_new = q_from_v(mdp, v).min(axis=1)
        resid = float(np.max(np.abs(v_new - v)))
        v = v_new
        if resid <= tol or it >= limit:
            break
    return ValueTable(v, tol, it), QTable(q_from_v(mdp, v))


def policy_evaluation(mdp: TabularMdp, policy) -> ValueTable:
    """Solve ``V = c_pi + gamma P_pi V`` directly."""
    probs = policy_matrix(mdp, policy)
    c_pi = np.einsum("sa,sa->s", probs, mdp.cost_mean)
    P_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    A = np.eye(mdp.num_states) - mdp.discount * P_pi
    try:
        v = np.linalg.solve(A, c_pi)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular policy-evaluation system") from exc
    resid = float(np.max(np.abs(c_pi + mdp.discount * P_pi @ v - v)))
    if not np.isfinite(resid) or resid > 1e-10 * max(1.0, float(np.max(np.abs(v)))):
        raise NumericError(f"policy evaluation residual too large: {resid}")
    return ValueTable(v, resid, 1)


def policy_iteration(mdp: TabularMdp, max_iter: int = 1000):
    """Howard policy iteration; returns (V*, optimal deterministic policy)."""
    v, _ = value_iteration(mdp, 1e-8)
    actions = greedy_actions(q_from_v(mdp, v))
    for _ in range(max_iter):
        vt = policy_evaluation(mdp, actions)
        q = q_from_v(mdp, vt)
        cur = q[np.arange(mdp.num_states), actions]
        better = q.min(axis=1) < cur - 1e-12 * max(1.0, float(np.max(np.abs(q))))
        if not np.any(better):
            return vt, TabularPolicy.from_actions(actions, mdp.num_actions)
        actions = np.where(better, np.argmin(q, axis=1), actions)
    raise NumericError("policy iteration did not converge")


def expected_cost_J(mdp: TabularMdp, policy) -> float:
    return float(mdp.initial_dist @ policy_evaluation(mdp, policy).values)


def disadvantage(mdp: TabularMdp, policy) -> QTable:
    v = policy_evaluation(mdp, policy).values
    return QTable(q_from_v(mdp, v) - v[:, None])


def induced_oracle_policy(mdp: TabularMdp, oracle) -> TabularPolicy:
    """One-step greedy on the oracle: ``argmin_a c(s,a) + gamma E[V(s')]``."""
    vhat = _potential_values(mdp, oracle)
    return TabularPolicy.from_actions(greedy_actions(q_from_v(mdp, vhat)), mdp.num_actions)


def k_step_lookahead_values(mdp: TabularMdp, oracle, k: int) -> np.ndarray:
    """``W_{k-1}``: finite-horizon optimal values with terminal value ``oracle``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    w = _potential_values(mdp, oracle)
    for _ in range(k - 1):
        w = q_from_v(mdp, w).min(axis=1)
    return w


def k_step_lookahead_policy(mdp: TabularMdp, oracle, k: int) -> TabularPolicy:
    w = k_step_lookahead_values(mdp, oracle, k)
    return TabularPolicy.from_actions(greedy_actions(q_from_v(mdp, w)), mdp.num_actions)


def k_step_disadvantage(mdp: TabularMdp, oracle, k: int, policy, s: Optional[int] = None):
    """Expected ``sum_{i<=k} gamma^(i-1) c_i + gamma^k V(s_{k+1}) - V(s_1)`` under ``policy``.

    Returns the value at ``s``, or the whole (S,) vector when ``s`` is None.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    vhat = _potential_values(mdp, oracle)
    probs = policy_matrix(mdp, policy)
    c_pi = np.einsum("sa,sa->s", probs, mdp.cost_mean)
    P_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    u = vhat
    for _ in range(k):
        u = c_pi + mdp.discount * P_pi @ u
    out = u - vhat
    return out if s is None else float(out[s])


def k_step_objective_minimizer(mdp: TabularMdp, oracle, k: int, max_policies: int = 200_000):
    """Deterministic stationary policy minimizing the k-step disadvantage at every
    state at once, found by enumeration; ``None`` if no such policy exists."""
    if mdp.num_actions ** mdp.num_states > max_policies:
        raise ValueError("too many policies to enumerate")
    best, cands = None, []
    for acts in itertools.product(range(mdp.num_actions), repeat=mdp.num_states):
        obj = k_step_disadvantage(mdp, oracle, k, np.array(acts))
        cands.append((acts, obj))
        best = obj if best is None else np.minimum(best, obj)
    for acts, obj in cands:
        if np.all(obj <= best + 1e-12):
            return TabularPolicy.from_actions(np.array(acts), mdp.num_actions)
    return None


# --------------------------------------------------------------------------
# the two-line chain
# --------------------------------------------------------------------------


def counterexample_layout(chain_len: int) -> dict:
    """State ids: top ``0..N``, bottom ``N+1..2N`` (bottom_1..bottom_N), sink ``2N+1``."""
    N = chain_len
    return {"top": np.arange(N + 1), "bottom": np.arange(N + 1, 2 * N + 1), "sink": 2 * N + 1}


def build_counterexample(chain_len: int, gamma: float, delta: float):
    """Deterministic two-line chain and its misleading oracle.

    Top states cost 0 and bottom states cost 1 (state costs, so constant over
    actions). Action 0 moves to the next top state, action 1 to the next
    bottom state; both chain ends feed a zero-cost absorbing sink, which gives
    ``2N + 2`` states. The oracle is ``0.5 + delta`` on top states (and the
    sink) and ``0.5 - delta`` on bottom states, so its sup-norm error to V* is
    ``0.5 + delta`` everywhere and it ranks every pair of actions the wrong
    way round.
    """
    N = int(chain_len)
    if N < 2:
        raise ValueError("chain_len must be >= 2")
    if not 0.0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    lay = counterexample_layout(N)
    S = 2 * N + 2
    top = lambda i: i  # noqa: E731
    bot = lambda i: N + i  # noqa: E731  (i = 1..N)
    sink = lay["sink"]
    P = np.zeros((S, 2, S))
    for i in range(N):
        for s in (top(i),) + ((bot(i),) if i >= 1 else ()):
            P[s, 0, top(i + 1)] = 1.0
            P[s, 1, bot(i + 1)] = 1.0
    for s in (top(N), bot(N), sink):
        P[s, :, sink] = 1.0
    cost = np.zeros(S)
    cost[lay["bottom"]] = 1.0
    nu = np.zeros(S)
    nu[top(0)] = 1.0
    mdp = TabularMdp(P, np.repeat(cost[:, None], 2, axis=1), gamma, nu)
    vhat = np.full(S, 0.5 + delta)
    vhat[lay["bottom"]] = 0.5 - delta
    return mdp, TabularPotential(vhat, source="perturbed")


def lower_bound_value(gamma: float, chain_len: int) -> float:
    """``gamma (1 - gamma^N) / (1 - gamma)``: cost of visiting N bottom states."""
    return gamma * (1 - gamma ** chain_len) / (1 - gamma)


def upper_bound_value(gamma: float, eps: float, k: int) -> float:
    gk = gamma ** k
    return 2 * gk * eps / (1 - gk)


def lookahead_gap(mdp: TabularMdp, oracle, k: int, j_star: Optional[float] = None) -> float:
    """``J(pi_k) - J(pi*)`` for the k-step lookahead policy on ``oracle``."""
    if j_star is None:
        _, pi_star = policy_iteration(mdp)
        j_star = expected_cost_J(mdp, pi_star)
    return expected_cost_J(mdp, k_step_lookahead_policy(mdp, oracle, k)) - j_star


def verify_theorem1(gamma: float, delta: float, chain_len: int, rel_tol: float = 0.01) -> TheoremReport:
    """Gap of the oracle-induced policy on the chain against ``gamma(1-gamma^N)/(1-gamma)``."""
    mdp, vhat = build_counterexample(chain_len, gamma, delta)
    _, pi_star = policy_iteration(mdp)
    j_star = expected_cost_J(mdp, pi_star)
    gap = expected_cost_J(mdp, induced_oracle_policy(mdp, vhat)) - j_star
    bound = lower_bound_value(gamma, chain_len)
    holds = gap >= (1 - rel_tol) * bound - HOLD_TOL and gap <= bound + HOLD_TOL
    eps = 0.5 + delta
    return TheoremReport(
        gap_observed=gap, bound_value=bound, holds=bool(holds), kind="lower",
        parameters={"gamma": gamma, "delta": delta, "eps": eps, "k": 1, "chain_len": chain_len,
                    "j_star": j_star, "truncation_term": gamma ** chain_len,
                    "sharp_ratio": gap / (2 * gamma * eps / (1 - gamma)) if gamma > 0 else float("nan")},
        gaps=[gap],
    )


def verify_theorem2(mdp: TabularMdp, eps: float, k: int, trials: int,
                    rng: np.random.Generator, mode: str = "uniform") -> TheoremReport:
    """Worst lookahead gap over ``trials`` perturbed oracles ``V* + u``, ``|u| <= eps``."""
    from .oracle import perturb_oracle

    if trials < 1:
        raise ValueError("trials must be >= 1")
    v_star, pi_star = policy_iteration(mdp)
    j_star = expected_cost_J(mdp, pi_star)
    gaps, oracles = [], []
    for _ in range(trials):
        vhat = perturb_oracle(v_star, eps, mode=mode, rng=rng, mdp=mdp).values
        oracles.append(vhat)
        gaps.append(lookahead_gap(mdp, vhat, k, j_star))
    bound = upper_bound_value(mdp.discount, eps, k)
    worst = int(np.argmax(gaps))
    return TheoremReport(
        gap_observed=float(gaps[worst]), bound_value=bound,
        holds=bool(gaps[worst] <= bound + HOLD_TOL),
        parameters={"gamma": mdp.discount, "eps": eps, "k": k, "trials": trials, "mode": mode,
                    "num_states": mdp.num_states, "num_actions": mdp.num_actions,
                    "worst_oracle": oracles[worst].tolist()},
        gaps=[float(g) for g in gaps],
    )


def verify_theorem2_counterexample(gamma: float, delta: float, chain_len: int, k: int) -> TheoremReport:
    mdp, vhat = build_counterexample(chain_len, gamma, delta)
    eps = 0.5 + delta
    gap = lookahead_gap(mdp, vhat, k)
    bound = upper_bound_value(gamma, eps, k)
    return TheoremReport(gap, bound, bool(gap <= bound + HOLD_TOL),
                         {"gamma": gamma, "delta": delta, "eps": eps, "k": k, "chain_len": chain_len},
                         [gap])


@dataclass
class SweepRow:
    gamma: float
    eps: float
    k: int
    trial: int
    gap: float
    bound: float
    holds: bool
    instance: str
    dump: Optional[dict] = None


def theorem2_sweep(gammas: Sequence[float], epsilons: Sequence[float], ks: Sequence[int],
                   num_mdps: int, seed: int, max_states: int = 20, max_actions: int = 4,
                   mode: str = "uniform") -> list:
    """Random-MDP sweep of the k-step bound, one row per (gamma, eps, k, mdp).

    Each MDP gets one perturbed oracle per (gamma, eps) that is shared across
    k, so the k-curve for an instance compares like with like. Violating rows
    carry a full instance dump.
    """
    from .oracle import perturb_oracle

    rows = []
    root = np.random.SeedSequence(seed)
    for gi, gamma in enumerate(gammas):
        for ei, eps in enumerate(epsilons):
            children = root.spawn(num_mdps)
            for m, child in enumerate(children):
                rng = np.random.default_rng(child)
                S = int(rng.integers(2, max_states + 1))
                A = int(rng.integers(2, max_actions + 1))
                mdp = random_mdp(S, A, gamma, rng)
                v_star, pi_star = policy_iteration(mdp)
                j_star = expected_cost_J(mdp, pi_star)
                vhat = perturb_oracle(v_star, eps, mode=mode, rng=rng, mdp=mdp).values
                for k in ks:
                    pol = k_step_lookahead_policy(mdp, vhat, k)
                    gap = expected_cost_J(mdp, pol) - j_star
                    bound = upper_bound_value(gamma, eps, k)
                    ok = gap <= bound + HOLD_TOL
                    dump = None
                    if not ok:
                        dump = {"mdp": mdp.describe(), "oracle": vhat.tolist(),
                                "v_star": v_star.values.tolist(),
                                "policy": pol.actions.tolist(),
                                "optimal_policy": pi_star.actions.tolist()}
                    rows.append(SweepRow(gamma, eps, k, m, float(gap), bound, bool(ok),
                                         f"g{gi}e{ei}m{m}:S{S}A{A}", dump))
    return rows
