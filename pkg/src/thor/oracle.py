"""Cost-to-go oracles: TD and Monte-Carlo fits from demonstrations, and
controlled perturbations of exact optimal values."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .approx import (Architecture, ParamVector, critic_fit, critic_forward, init_params,
                     load_params, save_params)
from .errors import ContractError, TrainingDivergence, UnsupportedError
from .mdp import TabularMdp, Trajectory
from .shaping import Potential

BACKINGS = ("auto", "tabular", "mlp")


@dataclass
class DemoSet:
    trajectories: list
    expert: str = "unknown"
    env_name: str = "unknown"

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("a demo set needs at least one trajectory")
        d = self.trajectories[0].observations.shape[1]
        a_shape = self.trajectories[0].actions.shape[1:]
        for tr in self.trajectories:
            if tr.observations.shape[1] != d or tr.actions.shape[1:] != a_shape:
                raise ValueError("demo trajectories differ in observation or action dimension")
            if tr.next_observations is None:
                raise ValueError("demo trajectories need next states")

    @property
    def count(self) -> int:
        return len(self.trajectories)

    @property
    def observation_dim(self) -> int:
        return self.trajectories[0].observations.shape[1]

    @property
    def num_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def metadata(self) -> dict:
        return {"expert": self.expert, "env": self.env_name, "count": self.count}


@dataclass
class TrainingReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    epochs: int = 0
    stopped_early: bool = False
    final_td_error: float = float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tl in enumerate(self.train_losses):
                vl = self.val_losses[i] if i < len(self.val_losses) else ""
                w.writerow([i + 1, format(tl, ".17g"), vl if vl == "" else format(vl, ".17g")])


class ValueOracle(Potential):
    """A fitted cost-to-go estimate; immutable once built."""

    report: TrainingReport
    tabular: bool = False


class TabularOracle(ValueOracle):
    tabular = True

    def __init__(self, values, source: str = "table", report: Optional[TrainingReport] = None):
        values = np.array(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise TrainingDivergence("oracle table has non-finite entries")
        values.setflags(write=False)
        self.values = values
        self.source = source
        self.report = report or TrainingReport()

    def _ids(self, states) -> np.ndarray:
        s = np.asarray(states)
        if s.ndim == 2:
            return np.argmax(s, axis=1)
        return s.astype(int)

    def evaluate(self, state):
        s = np.asarray(state)
        return float(self.values[int(np.argmax(s)) if s.ndim else int(s)])

    def evaluate_batch(self, states):
        return self.values[self._ids(states)].astype(float)

    def table(self, num_states):
        if len(self.values) != num_states:
            raise ValueError("oracle table size does not match the MDP")
        return np.array(self.values)


class MlpOracle(ValueOracle):
    def __init__(self, params: ParamVector, source: str = "mlp", report: Optional[TrainingReport] = None):
        if params.arch.head != "value":
            raise ValueError("oracle network needs a value head")
        self.params = params
        self.source = source
        self.report = report or TrainingReport()

    def evaluate(self, state):
        return float(critic_forward(self.params, np.asarray(state, dtype=float)[None, :])[0])

    def evaluate_batch(self, states):
        return critic_forward(self.params, np.asarray(states, dtype=float))


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _is_one_hot(obs: np.ndarray) -> bool:
    return bool(np.all((obs == 0) | (obs == 1)) and np.all(obs.sum(axis=1) == 1))


def _resolve_backing(demos: DemoSet, backing: str) -> str:
    if backing not in BACKINGS:
        raise ValueError(f"backing must be one of {BACKINGS}")
    if backing != "auto":
        return backing
    all_obs = np.concatenate([t.observations for t in demos.trajectories])
    return "tabular" if _is_one_hot(all_obs) else "mlp"


def returns_to_go(costs: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(costs))
    acc = 0.0
    for t in range(len(costs) - 1, -1, -1):
        acc = costs[t] + gamma * acc
        out[t] = acc
    return out


def _split(demos: DemoSet, fraction: float, rng):
    n = demos.count
    n_val = int(round(fraction * n)) if n >= 10 else 0
    if n_val == 0:
        return list(demos.trajectories), []
    order = rng.permutation(n)
    val = set(order[:n_val].tolist())
    train = [t for i, t in enumerate(demos.trajectories) if i not in val]
    return train, [demos.trajectories[i] for i in sorted(val)]


def _stack(trajs: Sequence[Trajectory]):
    obs = np.concatenate([t.observations for t in trajs])
    nxt = np.concatenate([t.next_observations for t in trajs])
    cost = np.concatenate([t.costs for t in trajs])
    done = np.concatenate([t.dones for t in trajs])
    return obs, nxt, cost, done


def _td_loss(values_fn, trajs, gamma: float) -> float:
    obs, nxt, cost, done = _stack(trajs)
    delta = cost + gamma * np.where(done, 0.0, values_fn(nxt)) - values_fn(obs)
    return float(np.mean(delta ** 2))


def _check_loss(loss: float, epoch: int) -> None:
    if not math.isfinite(loss):
        raise TrainingDivergence(f"TD loss became {loss} at epoch {epoch}")


def _value_arch(dim: int, demos_obs: np.ndarray, target_scale: Sequence[float],
                hidden=(64, 64), input_box=None) -> Architecture:
    if input_box is not None:
        low, high = (np.asarray(b, dtype=float) for b in input_box)
        shift, scale = (high + low) / 2, np.maximum((high - low) / 2, 1e-8)
    else:
        shift, scale = demos_obs.mean(axis=0), np.maximum(demos_obs.std(axis=0), 1e-8)
    mean, std = target_scale
    return Architecture(dim, 1, hidden=tuple(hidden), head="value", activation="tanh",
                        in_shift=tuple(shift), in_scale=tuple(scale),
                        out_shift=float(mean), out_scale=float(max(std, 1e-3)))


# --------------------------------------------------------------------------
# TD learning
# --------------------------------------------------------------------------


def fit_td(demos: DemoSet, gamma: float, lam: float = 0.0, lr: float = 0.1, epochs: int = 100,
           rng: Optional[np.random.Generator] = None, backing: str = "auto",
           lr_schedule: str = "constant", validation_fraction: Optional[float] = None,
           patience: int = 10, hidden=(64, 64), inner_steps: int = 20, input_box=None) -> ValueOracle:
    """TD(lambda) from demonstration transitions.

    Tabular backing runs online TD(lambda) with accumulating traces over the
    demo episodes, ``epochs`` passes, with step size ``lr`` or ``1/n(s)``
    (``lr_schedule="visit"``, ``n`` counting episodes that visit ``s``).
    Network backing runs the offline equivalent: each epoch recomputes
    lambda-returns under the current critic and regresses onto them for
    ``inner_steps`` L-BFGS iterations. Early stopping watches the TD error on
    held-out demos (default 10% for networks, none for tables) and restores
    the best iterate.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= gamma < 1.0 and not (gamma == 1.0 and all(t.terminated for t in demos.trajectories)):
        raise ValueError("gamma must lie in [0, 1)")
    rng = np.random.default_rng(0) if rng is None else rng
    kind = _resolve_backing(demos, backing)
    if validation_fraction is None:
        validation_fraction = 0.1 if kind == "mlp" else 0.0
    train, val = _split(demos, validation_fraction, rng)
    if kind == "tabular":
        return _fit_td_tabular(demos.observation_dim, train, val, gamma, lam, lr, epochs,
                               lr_schedule, patience)
    return _fit_td_mlp(train, val, gamma, lam, epochs, rng, patience, hidden, inner_steps, input_box)


def _fit_td_tabular(S, train, val, gamma, lam, lr, epochs, lr_schedule, patience) -> TabularOracle:
    if lr_schedule not in ("constant", "visit"):
        raise ValueError(f"unknown lr schedule {lr_schedule!r}")
    V = np.zeros(S)
    visits = np.zeros(S)
    episodes = [(np.argmax(t.observations, axis=1), np.argmax(t.next_observations, axis=1),
                 t.costs, t.dones) for t in train]
    report = TrainingReport()
    best_V, best, stale = V.copy(), math.inf, 0
    table_fn = lambda o: V[np.argmax(o, axis=1)]
    for epoch in range(1, epochs + 1):
        for s_ids, n_ids, costs, dones in episodes:
            e = np.zeros(S)
            seen = np.zeros(S, dtype=bool)
            for s, n, c, d in zip(s_ids, n_ids, costs, dones):
                if not seen[s]:
                    seen[s] = True
                    visits[s] += 1
                delta = c + (0.0 if d else gamma * V[n]) - V[s]
                e[s] += 1.0
                step = lr if lr_schedule == "constant" else np.divide(
                    1.0, visits, out=np.zeros(S), where=visits > 0)
                V += step * delta * e
                e *= gamma * lam
        train_loss = _td_loss(table_fn, train, gamma)
        _check_loss(train_loss, epoch)
        report.train_losses.append(train_loss)
        watch_loss = _td_loss(table_fn, val, gamma) if val else train_loss
        if val:
            report.val_losses.append(watch_loss)
        report.epochs = epoch
        if watch_loss < best - 1e-15:
            best, best_V, stale = watch_loss, V.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                report.stopped_early = True
                break
    if not report.stopped_early:
        best_V = V.copy()
    report.final_td_error = _td_loss(lambda o: best_V[np.argmax(o, axis=1)], train, gamma)
    return TabularOracle(best_V, source="td", report=report)


def lambda_returns(values_next: np.ndarray, costs: np.ndarray, dones: np.ndarray,
                   gamma: float, lam: float) -> np.ndarray:
    """Backward recursion ``G_t = c_t + gamma((1-lam) V(s_{t+1}) + lam G_{t+1})``.

    The tail bootstraps from ``V(s_{T+1})`` unless the episode terminated.
    """
    T = len(costs)
    G = np.zeros(T)
    nxt_g = 0.0
    for t in range(T - 1, -1, -1):
        v_n = 0.0 if dones[t] else values_next[t]
        if t == T - 1:
            G[t] = costs[t] + gamma * v_n
        else:
            G[t] = costs[t] + gamma * ((1 - lam) * v_n + lam * nxt_g)
        nxt_g = G[t]
    return G


def _fit_td_mlp(train, val, gamma, lam, epochs, rng, patience, hidden, inner_steps, input_box) -> MlpOracle:
    obs, nxt, cost, done = _stack(train)
    mc = np.concatenate([returns_to_go(t.costs, gamma) for t in train])
    arch = _value_arch(obs.shape[1], obs, (mc.mean(), mc.std()), hidden, input_box)
    params = init_params(arch, rng)
    bounds = np.cumsum([0] + [len(t) for t in train])
    report = TrainingReport()
    best_params, best, stale = params, math.inf, 0
    for epoch in range(1, epochs + 1):
        v_next = critic_forward(params, nxt)
        targets = np.concatenate([
            lambda_returns(v_next[a:b], cost[a:b], done[a:b], gamma, lam)
            for a, b in zip(bounds[:-1], bounds[1:])])
        params = critic_fit(params, obs, targets, epochs=inner_steps).params
        fn = lambda o, p=params: critic_forward(p, o)
        train_loss = _td_loss(fn, train, gamma)
        _check_loss(train_loss, epoch)
        report.train_losses.append(train_loss)
        watch_loss = _td_loss(fn, val, gamma) if val else train_loss
        if val:
            report.val_losses.append(watch_loss)
        report.epochs = epoch
        if watch_loss < best:
            best, best_params, stale = watch_loss, params, 0
        else:
            stale += 1
            if stale >= patience:
                report.stopped_early = True
                break
    report.final_td_error = _td_loss(lambda o: critic_forward(best_params, o), train, gamma)
    return MlpOracle(best_params, source="td", report=report)


# --------------------------------------------------------------------------
# Monte-Carlo regression
# --------------------------------------------------------------------------


def fit_mc(demos: DemoSet, gamma: float, epochs: int = 200, rng: Optional[np.random.Generator] = None,
           backing: str = "auto", hidden=(64, 64), input_box=None) -> ValueOracle:
    """Least-squares fit of states onto their discounted returns-to-go.

    Tables take the closed form (per-state mean over every visit); networks
    run ``epochs`` L-BFGS iterations. Returns of truncated episodes are not
    bootstrapped.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    kind = _resolve_backing(demos, backing)
    obs = np.concatenate([t.observations for t in demos.trajectories])
    G = np.concatenate([returns_to_go(t.costs, gamma) for t in demos.trajectories])
    if not np.all(np.isfinite(G)):
        raise TrainingDivergence("non-finite returns in demonstrations")
    report = TrainingReport(epochs=1)
    if kind == "tabular":
        ids = np.argmax(obs, axis=1)
        S = obs.shape[1]
        sums = np.bincount(ids, weights=G, minlength=S)
        counts = np.bincount(ids, minlength=S)
        values = np.divide(sums, counts, out=np.zeros(S), where=counts > 0)
        report.train_losses.append(float(np.mean((values[ids] - G) ** 2)))
        return TabularOracle(values, source="mc", report=report)
    arch = _value_arch(obs.shape[1], obs, (G.mean(), G.std()), hidden, input_box)
    fit = critic_fit(init_params(arch, rng), obs, G, epochs=epochs)
    report.train_losses = list(fit.losses)
    report.epochs = len(fit.losses) - 1
    return MlpOracle(fit.params, source="mc", report=report)


# --------------------------------------------------------------------------
# perturbation of exact values
# --------------------------------------------------------------------------


def _as_values(v) -> np.ndarray:
    values = getattr(v, "values", v)
    return np.asarray(values, dtype=float)


def perturb_oracle(v_star, eps: float, mode: str = "uniform",
                   rng: Optional[np.random.Generator] = None, mdp: Optional[TabularMdp] = None,
                   reference=None) -> TabularOracle:
    """``V* + u`` with ``max |u| <= eps``.

    ``uniform``: ``u_s ~ U(-eps, eps)``. ``adversarial-sign``: ``+eps`` on
    states whose reference value (``V*`` unless given) lies below the
    midpoint of its range and ``-eps`` elsewhere, which pulls good and bad
    states together and so flips action orderings whenever the value gaps
    are below ``2 eps``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    base = _as_values(v_star)
    if mode == "uniform":
        if eps == 0:
            noise = np.zeros_like(base)
        else:
            rng = np.random.default_rng() if rng is None else rng
            noise = rng.uniform(-eps, eps, size=base.shape)
    elif mode == "adversarial-sign":
        ref = base if reference is None else _as_values(reference)
        mid = (ref.min() + ref.max()) / 2
        noise = np.where(ref < mid, eps, -eps)
    else:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    out = base + noise
    err = float(np.max(np.abs(out - base))) if len(base) else 0.0
    if err > eps:
        raise ContractError(f"perturbation exceeded eps: {err} > {eps}")
    return TabularOracle(out, source=f"perturbed-{mode}")


def oracle_error(oracle, v_star) -> float:
    """Sup-norm distance between a tabular oracle and exact values."""
    ref = _as_values(v_star)
    if isinstance(oracle, MlpOracle):
        raise UnsupportedError("sup-norm error needs a tabular oracle; evaluate on sampled states instead")
    if isinstance(oracle, Potential):
        vals = oracle.table(len(ref))
    else:
        vals = _as_values(oracle)
    if vals.shape != ref.shape:
        raise ValueError("oracle and reference tables differ in size")
    return float(np.max(np.abs(vals - ref))) if len(ref) else 0.0


# --------------------------------------------------------------------------
# oracle files
# --------------------------------------------------------------------------


def save_oracle(path, oracle: ValueOracle) -> None:
    """Tables as ``state,value`` CSV; networks as parameter files."""
    if isinstance(oracle, TabularOracle):
        with open(path, "w") as fh:
            fh.write("state,value\n")
            for s, v in enumerate(oracle.values):
                fh.write(f"{s},{format(float(v), '.17g')}\n")
    elif isinstance(oracle, MlpOracle):
        save_params(path, oracle.params)
    else:
        raise UnsupportedError(f"cannot serialize oracle of type {type(oracle).__name__}")


def load_oracle(path) -> ValueOracle:
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# "):
        return MlpOracle(load_params(path), source="file")
    if first.strip() != "state,value":
        raise ValueError("unrecognized oracle file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return TabularOracle(data[order, 1], source="file")
