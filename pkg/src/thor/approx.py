"""Small numpy MLPs: categorical / diagonal-Gaussian policy heads and critics.

Parameters live in one flat float64 vector. Gradients are exact reverse-mode
(hand-written backprop); Fisher-vector products use a forward-mode pass
followed by a reverse pass.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .errors import NumericError, TrainingDivergence
from .mdp import Policy

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HEADS = ("categorical", "gaussian", "value")


@dataclass(frozen=True)
class Architecture:
    """Layer sizes plus fixed (non-trainable) input/output affine maps."""

    input_dim: int
    output_dim: int
    hidden: tuple = (64, 64)
    head: str = "categorical"
    activation: str = "tanh"
    bias: bool = True
    in_shift: Optional[tuple] = None
    in_scale: Optional[tuple] = None
    out_shift: float = 0.0
    out_scale: float = 1.0
    log_std_init: float = 0.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.head == "value" and self.output_dim != 1:
            raise ValueError("value head has a single output")
        for name in ("in_shift", "in_scale"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in np.broadcast_to(v, (self.input_dim,)))
                object.__setattr__(self, name, v)

    @property
    def sizes(self) -> list:
        return [self.input_dim, *self.hidden, self.output_dim]

    @property
    def layer_slices(self) -> list:
        out, off = [], 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(off, off + n_in * n_out)
            off += n_in * n_out
            b = slice(off, off + n_out) if self.bias else None
            off += n_out if self.bias else 0
            out.append((w, b, n_in, n_out))
        return out

    @property
    def num_net_params(self) -> int:
        w, b, n_in, n_out = self.layer_slices[-1]
        return (b.stop if b is not None else w.stop)

    @property
    def num_params(self) -> int:
        extra = self.output_dim if self.head == "gaussian" else 0
        return self.num_net_params + extra

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        d = json.loads(text)
        for k in ("hidden", "in_shift", "in_scale"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ParamVector:
    theta: np.ndarray
    arch: Architecture

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.arch.num_params,):
            raise ValueError(f"expected {self.arch.num_params} parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericError("non-finite parameters")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def replace(self, theta) -> "ParamVector":
        return ParamVector(theta, self.arch)

    def __len__(self):
        return len(self.theta)


def _orthogonal(rng, n_in, n_out, gain):
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(arch: Architecture, rng: np.random.Generator, final_scale: Optional[float] = None) -> ParamVector:
    """Orthogonal weights, zero biases; the last layer is scaled by ``final_scale``
    (0.01 for policy heads, 1.0 for critics by default)."""
    if final_scale is None:
        final_scale = 1.0 if arch.head == "value" else 0.01
    theta = np.zeros(arch.num_params)
    layers = arch.layer_slices
    for i, (w, b, n_in, n_out) in enumerate(layers):
        gain = final_scale if i == len(layers) - 1 else 1.0
        theta[w] = _orthogonal(rng, n_in, n_out, gain).ravel()
    if arch.head == "gaussian":
        theta[arch.num_net_params:] = arch.log_std_init
    return ParamVector(theta, arch)


def zero_params(arch: Architecture) -> ParamVector:
    theta = np.zeros(arch.num_params)
    if arch.head == "gaussian":
        theta[arch.num_net_params:] = arch.log_std_init
    return ParamVector(theta, arch)


# --------------------------------------------------------------------------
# core network passes
# --------------------------------------------------------------------------


def _inputs(arch: Architecture, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != arch.input_dim:
        raise ValueError(f"observation dim {x.shape[1]} != architecture input dim {arch.input_dim}")
    if arch.in_shift is not None:
        x = x - np.asarray(arch.in_shift)
    if arch.in_scale is not None:
        x = x / np.asarray(arch.in_scale)
    return x


def _forward(params: ParamVector, x: np.ndarray):
    """Network output (pre-head) and cached activations for backprop."""
    arch, th = params.arch, params.theta
    acts = [x]
    h = x
    layers = arch.layer_slices
    for i, (w, b, n_in, n_out) in enumerate(layers):
        z = h @ th[w].reshape(n_in, n_out)
        if b is not None:
            z = z + th[b]
        h = z if (i == len(layers) - 1 or arch.activation == "linear") else np.tanh(z)
        acts.append(h)
    return h, acts


def _backward(params: ParamVector, acts: list, dout: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dout * out)`` w.r.t. the network parameters."""
    arch, th = params.arch, params.theta
    grad = np.zeros(arch.num_params)
    layers = arch.layer_slices
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        w, b, n_in, n_out = layers[i]
        grad[w] = (acts[i].T @ delta).ravel()
        if b is not None:
            grad[b] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ th[w].reshape(n_in, n_out).T
            if arch.activation == "tanh":
                delta = delta * (1.0 - acts[i] ** 2)
    return grad


def _jvp(params: ParamVector, acts: list, v: np.ndarray) -> np.ndarray:
    """Directional derivative of the network output along parameter direction ``v``."""
    arch, th = params.arch, params.theta
    layers = arch.layer_slices
    dh = np.zeros_like(acts[0])
    for i, (w, b, n_in, n_out) in enumerate(layers):
        W, dW = th[w].reshape(n_in, n_out), v[w].reshape(n_in, n_out)
        dz = dh @ W + acts[i] @ dW
        if b is not None:
            dz = dz + v[b]
        last = i == len(layers) - 1
        dh = dz if (last or arch.activation == "linear") else dz * (1.0 - acts[i + 1] ** 2)
    return dh


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_std(params: ParamVector) -> np.ndarray:
    raw = params.theta[params.arch.num_net_params:]
    return np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)


def _log_std_grad_mask(params: ParamVector) -> np.ndarray:
    raw = params.theta[params.arch.num_net_params:]
    return ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(float)


# --------------------------------------------------------------------------
# distributions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    kind: str
    probs: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    log_std: Optional[np.ndarray] = None

    def sample(self, rng: np.random.Generator):
        if self.kind == "categorical":
            idx = int(np.searchsorted(np.cumsum(self.probs), rng.random(), side="right"))
            return min(idx, len(self.probs) - 1)
        return self.mean + np.exp(self.log_std) * rng.standard_normal(self.mean.shape)

    def mode(self):
        if self.kind == "categorical":
            return int(np.argmax(self.probs))
        return np.array(self.mean)


def policy_forward_batch(params: ParamVector, obs):
    """Distribution parameters for a batch: probs (N, n) or (mean (N, m), log_std (m,))."""
    arch = params.arch
    out, _ = _forward(params, _inputs(arch, obs))
    if arch.head == "categorical":
        return _softmax(out)
    if arch.head == "gaussian":
        return out, _log_std(params)
    raise ValueError("policy_forward needs a categorical or gaussian head")


def policy_forward(params: ParamVector, obs) -> ActionDistribution:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 1:
        raise ValueError("policy_forward takes a single observation")
    res = policy_forward_batch(params, obs[None, :])
    if params.arch.head == "categorical":
        return ActionDistribution("categorical", probs=res[0])
    mean, log_std = res
    return ActionDistribution("gaussian", mean=mean[0], log_std=log_std)


def log_prob_batch(params: ParamVector, obs, actions) -> np.ndarray:
    arch = params.arch
    out, _ = _forward(params, _inputs(arch, obs))
    return _log_prob_from_out(arch, out, _log_std(params) if arch.head == "gaussian" else None, actions)


def _log_prob_from_out(arch, out, log_std, actions):
    if arch.head == "categorical":
        a = np.asarray(actions, dtype=int).reshape(-1)
        z = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return z[np.arange(len(a)), a] - lse
    a = np.asarray(actions, dtype=float).reshape(out.shape)
    std = np.exp(log_std)
    zz = (a - out) / std
    return -0.5 * np.sum(zz ** 2, axis=1) - np.sum(log_std) - 0.5 * arch.output_dim * math.log(2 * math.pi)


def log_prob(params: ParamVector, obs, action) -> float:
    lp = float(log_prob_batch(params, np.asarray(obs, dtype=float)[None, :], [action])[0])
    if lp == -np.inf:
        warnings.warn("action has zero probability", RuntimeWarning)
    return lp


def _dlogp_dout(arch, out, log_std, actions):
    """d log pi / d(network output) per sample, and d log pi / d log_std summed."""
    if arch.head == "categorical":
        p = _softmax(out)
        a = np.asarray(actions, dtype=int).reshape(-1)
        g = -p
        g[np.arange(len(a)), a] += 1.0
        return g, None
    a = np.asarray(actions, dtype=float).reshape(out.shape)
    var = np.exp(2 * log_std)
    diff = a - out
    g_mean = diff / var
    g_logstd = diff ** 2 / var - 1.0
    return g_mean, g_logstd


def weighted_log_prob_grad(params: ParamVector, obs, actions, weights) -> np.ndarray:
    """``sum_i weights_i * grad log pi(a_i | s_i)`` in one backward pass."""
    arch = params.arch
    out, acts = _forward(params, _inputs(arch, obs))
    w = np.asarray(weights, dtype=float).reshape(-1)
    log_std = _log_std(params) if arch.head == "gaussian" else None
    g_out, g_ls = _dlogp_dout(arch, out, log_std, actions)
    grad = _backward(params, acts, g_out * w[:, None])
    if arch.head == "gaussian":
        grad[arch.num_net_params:] = (w @ g_ls) * _log_std_grad_mask(params)
    return grad


def log_prob_grad(params: ParamVector, obs, action) -> np.ndarray:
    g = weighted_log_prob_grad(params, np.asarray(obs, dtype=float)[None, :], [action], [1.0])
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite log-prob gradient")
    return g


def log_prob_grads_per_sample(params: ParamVector, obs, actions) -> np.ndarray:
    """(N, P) matrix of per-sample score vectors; intended for small N."""
    obs = np.asarray(obs, dtype=float)
    return np.stack([weighted_log_prob_grad(params, obs[i:i + 1], [actions[i]], [1.0])
                     for i in range(len(obs))])


def mean_kl(old: ParamVector, new: ParamVector, obs) -> float:
    """Mean over states of KL(pi_old || pi_new)."""
    arch = old.arch
    x = _inputs(arch, obs)
    out_o, _ = _forward(old, x)
    out_n, _ = _forward(new, x)
    if arch.head == "categorical":
        lo = out_o - out_o.max(1, keepdims=True)
        lo = lo - np.log(np.exp(lo).sum(1, keepdims=True))
        ln = out_n - out_n.max(1, keepdims=True)
        ln = ln - np.log(np.exp(ln).sum(1, keepdims=True))
        return float(np.mean(np.sum(np.exp(lo) * (lo - ln), axis=1)))
    ls_o, ls_n = _log_std(old), _log_std(new)
    var_o, var_n = np.exp(2 * ls_o), np.exp(2 * ls_n)
    kl = ls_n - ls_o + (var_o + (out_o - out_n) ** 2) / (2 * var_n) - 0.5
    return float(np.mean(np.sum(kl, axis=1)))


def fisher_vector_product(params: ParamVector, obs, v: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """``F v`` with ``F`` the mean Fisher information over the given states."""
    arch = params.arch
    x = _inputs(arch, obs)
    out, acts = _forward(params, x)
    n = len(x)
    dout = _jvp(params, acts, v)
    if arch.head == "categorical":
        p = _softmax(out)
        u = p * dout - p * np.sum(p * dout, axis=1, keepdims=True)
        fv = _backward(params, acts, u / n)
    else:
        var = np.exp(2 * _log_std(params))
        fv = _backward(params, acts, dout / var / n)
        mask = _log_std_grad_mask(params)
        fv[arch.num_net_params:] = 2.0 * v[arch.num_net_params:] * mask
    return fv + damping * v


def categorical_entropy(params: ParamVector, obs) -> float:
    p = policy_forward_batch(params, obs)
    return float(np.mean(-np.sum(p * np.log(np.clip(p, 1e-300, None)), axis=1)))


class MlpPolicy(Policy):
    """:class:`~thor.mdp.Policy` backed by a parameter vector."""

    def __init__(self, params: ParamVector, greedy: bool = False):
        if params.arch.head == "value":
            raise ValueError("a value network is not a policy")
        self.params = params
        self.greedy = greedy
        self.deterministic = greedy

    def distribution(self, obs) -> ActionDistribution:
        return policy_forward(self.params, obs)

    def act(self, obs, rng):
        d = self.distribution(np.asarray(obs, dtype=float))
        return d.mode() if self.greedy else d.sample(rng)

    def act_batch(self, obs_batch, rngs):
        res = policy_forward_batch(self.params, obs_batch)
        if self.params.arch.head == "categorical":
            if self.greedy:
                return list(np.argmax(res, axis=1))
            cdf = np.cumsum(res, axis=1)
            u = np.array([r.random() for r in rngs])
            idx = (cdf <= u[:, None]).sum(axis=1)
            return list(np.minimum(idx, res.shape[1] - 1))
        mean, log_std = res
        if self.greedy:
            return list(mean)
        std = np.exp(log_std)
        return [mean[i] + std * r.standard_normal(mean.shape[1]) for i, r in enumerate(rngs)]

    def action_log_prob(self, obs, action):
        return log_prob(self.params, obs, action)


# --------------------------------------------------------------------------
# critics
# --------------------------------------------------------------------------


def critic_forward(params: ParamVector, obs) -> np.ndarray:
    """Values for a batch of observations (a 1-D obs gives a length-1 array)."""
    arch = params.arch
    out, _ = _forward(params, _inputs(arch, obs))
    return arch.out_shift + arch.out_scale * out[:, 0]


def critic_loss_and_grad(params: ParamVector, obs, targets, weight_decay: float = 0.0):
    arch = params.arch
    x = _inputs(arch, obs)
    out, acts = _forward(params, x)
    pred = arch.out_shift + arch.out_scale * out[:, 0]
    resid = pred - np.asarray(targets, dtype=float)
    n = len(resid)
    loss = float(np.mean(resid ** 2))
    grad = _backward(params, acts, (2.0 * arch.out_scale / n) * resid[:, None])
    if weight_decay:
        loss += weight_decay * float(params.theta @ params.theta)
        grad = grad + 2 * weight_decay * params.theta
    return loss, grad


@dataclass
class FitResult:
    params: ParamVector
    losses: list
    stopped_early: bool = False


def critic_fit(params: ParamVector, obs, targets, epochs: int = 25, lr: float = 1e-3,
               method: str = "lbfgs", batch_size: int = 256,
               rng: Optional[np.random.Generator] = None) -> FitResult:
    """Least-squares regression of the critic onto ``targets``.

    ``lbfgs`` runs ``epochs`` L-BFGS iterations (line-searched, so the loss
    trace never increases); ``adam`` runs minibatch Adam epochs and keeps the
    best full-batch iterate.
    """
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise ValueError("critic targets must be finite")
    obs = np.asarray(obs, dtype=float)
    arch = params.arch

    def f(theta):
        loss, grad = critic_loss_and_grad(ParamVector(theta, arch), obs, targets)
        return loss, grad

    loss0, _ = f(params.theta)
    losses = [loss0]
    if method == "lbfgs":
        def cb(intermediate_result):
            losses.append(float(intermediate_result.fun))

        res = optimize.minimize(f, params.theta, jac=True, method="L-BFGS-B", callback=cb,
                                options={"maxiter": int(epochs), "maxcor": 10, "ftol": 1e-15, "gtol": 1e-10})
        theta = res.x
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergence("critic parameters became non-finite")
        if float(res.fun) > losses[0]:
            theta = params.theta
            losses.append(losses[0])
        out = ParamVector(theta, arch)
    elif method == "adam":
        rng = np.random.default_rng(0) if rng is None else rng
        opt = Adam(len(params.theta), lr)
        theta = np.array(params.theta)
        best, best_loss = theta.copy(), loss0
        n = len(obs)
        stopped = False
        for _ in range(int(epochs)):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                _, g = critic_loss_and_grad(ParamVector(theta, arch), obs[idx], targets[idx])
                theta = opt.step(theta, g)
            loss = f(theta)[0]
            losses.append(loss)
            if not math.isfinite(loss) or loss > 1e6:
                raise TrainingDivergence(f"critic loss diverged: {loss}")
            if loss <= best_loss:
                best, best_loss = theta.copy(), loss
        out = ParamVector(best, arch)
        return FitResult(out, losses, stopped)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not math.isfinite(losses[-1]) or losses[-1] > 1e6 and losses[-1] > losses[0]:
        raise TrainingDivergence(f"critic loss diverged: {losses[-1]}")
    return FitResult(out, losses)


class Adam:
    def __init__(self, n: int, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mh / (np.sqrt(vh) + self.eps)


# --------------------------------------------------------------------------
# parameter files
# --------------------------------------------------------------------------


def save_params(path, params: ParamVector) -> None:
    with open(path, "w") as fh:
        fh.write("# " + params.arch.to_json() + "\n")
        for x in params.theta:
            fh.write(format(float(x), ".17g") + "\n")


def load_params(path) -> ParamVector:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise ValueError("parameter file lacks an architecture header")
        arch = Architecture.from_json(header[2:])
        theta = np.array([float(line) for line in fh if line.strip()])
    return ParamVector(theta, arch)


def finite_difference_grad(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        g[i] = (f(tp) - f(tm)) / (2 * h)
    return g


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def standardize_stats(x: np.ndarray, min_scale: float = 1e-8):
    x = np.asarray(x, dtype=float)
    return tuple(x.mean(axis=0)), tuple(np.maximum(x.std(axis=0), min_scale))


def obs_box_affine(low: Sequence[float], high: Sequence[float]):
    """Input shift/scale mapping a finite observation box onto [-1, 1]."""
    low, high = np.asarray(low, dtype=float), np.asarray(high, dtype=float)
    return tuple((high + low) / 2), tuple(np.maximum((high - low) / 2, 1e-8))
