"""Multi-seed experiments: config parsing, oracle construction, sweeps over
k, CSV emission and summary statistics. Rewards are reported as negated
costs."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import os
import traceback
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .algo import K_INF, ThorConfig, format_k, parse_k, thor_train
from .envs import ENV_NAMES, make_env, scripted_expert
from .errors import ConfigError, ThorError
from .mdp import rollout_batch, spawn_rngs, read_trajectories
from .oracle import DemoSet, fit_td, load_oracle

log = logging.getLogger(__name__)

RAW_COLUMNS = ["method", "k", "seed", "iteration", "env_steps", "mean_return", "shaped_return",
               "kl", "critic_loss", "success_rate"]
AGG_COLUMNS = ["method", "k", "iteration", "mean", "std", "n"]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSpec:
    """How to obtain the shaping potential: ``kind`` is ``td``, ``file`` or ``none``."""

    kind: str = "td"
    path: Optional[str] = None
    demos: int = 50
    expert: str = "degraded(0.3)"
    demo_seed: int = 12345
    gamma: float = 0.99
    lam: float = 0.9
    lr: float = 0.1
    epochs: int = 100
    backing: str = "auto"
    hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.kind not in ("td", "file", "none"):
            raise ConfigError(f"oracle kind must be td, file or none, not {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("oracle kind 'file' needs a path")
        if self.demos < 1:
            raise ConfigError("oracle demos must be >= 1")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    k: object
    shaped: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k", parse_k(self.k))

    @property
    def label(self) -> str:
        return f"{self.name}[k={format_k(self.k)}]"


DEFAULT_METHODS = (MethodSpec("thor", 10), MethodSpec("aggrevated", 1),
                   MethodSpec("trpo_gae", K_INF, shaped=False))


def parse_method(text: str) -> MethodSpec:
    """``thor:10``, ``aggrevated`` (k=1, shaped) or ``trpo_gae`` (k=inf, unshaped)."""
    text = text.strip()
    if text == "aggrevated":
        return MethodSpec("aggrevated", 1)
    if text == "trpo_gae":
        return MethodSpec("trpo_gae", K_INF, shaped=False)
    if text.startswith("thor:"):
        return MethodSpec("thor", text.split(":", 1)[1])
    raise ConfigError(f"unknown method {text!r}; use thor:<k>, aggrevated or trpo_gae")


@dataclass(frozen=True)
class ExperimentSpec:
    env_name: str = "mountain_car"
    horizon: int = 200
    oracle: OracleSpec = OracleSpec()
    methods: tuple = DEFAULT_METHODS
    seeds: tuple = tuple(range(25))
    output_dir: str = "results"
    thor: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.env_name not in ENV_NAMES:
            raise ConfigError(f"unknown environment {self.env_name!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be pairwise distinct")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for m in self.methods:
            if m.k != K_INF and not 1 <= m.k <= self.horizon:
                raise ConfigError(f"k={m.k} outside [1, {self.horizon}]")
        bad = set(self.thor) - THOR_KEYS
        if bad:
            raise ConfigError(f"unknown thor settings: {sorted(bad)}")


THOR_KEYS = {f.name for f in dataclasses.fields(ThorConfig)} - {"k", "env", "oracle", "seed", "method"}


# --------------------------------------------------------------------------
# oracle construction
# --------------------------------------------------------------------------


def make_demos(env_name: str, horizon: int, expert: str, count: int, seed) -> DemoSet:
    env = make_env(env_name, horizon)
    policy = scripted_expert(env_name, expert)
    trajs = rollout_batch(env, policy, spawn_rngs(seed, count))
    return DemoSet(trajs, expert=str(expert), env_name=env_name)


def build_oracle(spec: OracleSpec, env_name: str, horizon: int):
    if spec.kind == "none":
        return None
    if spec.kind == "file":
        return load_oracle(spec.path)
    env = make_env(env_name, horizon)
    demos = make_demos(env_name, horizon, spec.expert, spec.demos, spec.demo_seed)
    return fit_td(demos, spec.gamma, lam=spec.lam, lr=spec.lr, epochs=spec.epochs,
                  rng=np.random.default_rng(spec.demo_seed), backing=spec.backing,
                  hidden=spec.hidden, input_box=(env.observation_low, env.observation_high))


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------


@dataclass
class RunFailure:
    method: str
    k: object
    seed: int
    error: str


@dataclass
class LearningCurveSet:
    """Raw per-(method, k, seed) series plus failures; aggregates are derived."""

    raw: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def add(self, method: str, k, seed: int, records: Sequence) -> None:
        self.raw[(method, parse_k(k), seed)] = list(records)

    def keys(self):
        """Distinct ``(method, k)`` pairs in insertion order."""
        out = []
        for m, k, _ in self.raw:
            if (m, k) not in out:
                out.append((m, k))
        return out

    def series(self, method: str, k, metric: str = "mean_return") -> dict:
        k = parse_k(k)
        return {s: np.array([getattr(r, metric) for r in recs])
                for (m, kk, s), recs in self.raw.items() if m == method and kk == k}

    def aggregate(self, method: str, k, metric: str = "mean_return"):
        """``(iterations, mean, std, n)`` across seeds; std is the population std."""
        runs = self.series(method, k, metric)
        if not runs:
            raise KeyError((method, k))
        lengths = {len(v) for v in runs.values()}
        if len(lengths) != 1:
            raise ValueError("series are not aligned on the iteration index")
        stack = np.stack(list(runs.values()))
        iters = np.arange(1, stack.shape[1] + 1)
        return iters, stack.mean(axis=0), stack.std(axis=0), stack.shape[0]

    def rows(self):
        for (m, k, s), recs in self.raw.items():
            for r in recs:
                yield [m, format_k(k), str(s), str(r.iteration), str(r.env_steps), _fmt(r.mean_return),
                       _fmt(r.shaped_return), _fmt(r.kl), _fmt(r.critic_loss), _fmt(r.success_rate)]

    def write(self, out_dir: str) -> tuple:
        os.makedirs(out_dir, exist_ok=True)
        raw_path = os.path.join(out_dir, "curves.csv")
        agg_path = os.path.join(out_dir, "aggregate.csv")
        with open(raw_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_COLUMNS)
            w.writerows(self.rows())
        with open(agg_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGG_COLUMNS)
            for m, k in self.keys():
                iters, mean, std, n = self.aggregate(m, k)
                for i, mu, sd in zip(iters, mean, std):
                    w.writerow([m, format_k(k), str(i), _fmt(mu), _fmt(sd), str(n)])
        if self.failures:
            with open(os.path.join(out_dir, "failures.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["method", "k", "seed", "error"])
                for f in self.failures:
                    w.writerow([f.method, format_k(f.k), f.seed, f.error])
        return raw_path, agg_path


def read_curves(path: str) -> LearningCurveSet:
    """Rebuild a curve set from a raw curves CSV."""
    from .algo import IterationRecord

    out = LearningCurveSet()
    grouped: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], parse_k(row["k"]), int(row["seed"]))
            grouped.setdefault(key, []).append(IterationRecord(
                iteration=int(row["iteration"]), env_steps=int(row["env_steps"]),
                mean_return=float(row["mean_return"]), std_return=float("nan"),
                shaped_return=float(row["shaped_return"]), kl=float(row["kl"]),
                critic_loss=float(row["critic_loss"]),
                success_rate=float(row.get("success_rate") or "nan")))
    for (m, k, s), recs in grouped.items():
        out.add(m, k, s, recs)
    return out


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def run_config(spec: ExperimentSpec, method: MethodSpec, seed: int, oracle) -> ThorConfig:
    env = make_env(spec.env_name, spec.horizon)
    return ThorConfig(k=method.k, seed=seed, env=env, oracle=oracle if method.shaped else None,
                      method=method.name, **spec.thor)


def run_experiment(spec: ExperimentSpec, oracle=None, write: bool = True, progress=None) -> LearningCurveSet:
    """Train every (method, seed) pair; failed runs are recorded and skipped."""
    if oracle is None and any(m.shaped for m in spec.methods):
        oracle = build_oracle(spec.oracle, spec.env_name, spec.horizon)
    curves = LearningCurveSet()
    for method in spec.methods:
        for seed in spec.seeds:
            try:
                res = thor_train(run_config(spec, method, seed, oracle))
                curves.add(method.name, method.k, seed, res.curve)
            except (ThorError, ArithmeticError, ValueError) as exc:
                log.error("run %s seed %s failed: %s", method.label, seed, exc)
                log.debug("%s", traceback.format_exc())
                curves.failures.append(RunFailure(method.name, method.k, seed, f"{type(exc).__name__}: {exc}"))
            if progress is not None:
                progress(method, seed)
    if write:
        curves.write(spec.output_dir)
    return curves


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


def iterations_to_threshold(series, threshold: float) -> Optional[int]:
    """First 1-based iteration whose value is ``>= threshold``, else ``None``."""
    hits = np.flatnonzero(np.asarray(series) >= threshold)
    return int(hits[0]) + 1 if hits.size else None


def trapezoid_auc(series) -> float:
    y = np.asarray(series, dtype=float)
    if len(y) < 2:
        return 0.0
    return float(np.sum((y[1:] + y[:-1]) / 2))


def median_iterations(values: Sequence[Optional[int]]) -> float:
    """Median with ``None`` (never reached) counted as infinity."""
    arr = np.array([np.inf if v is None else v for v in values], dtype=float)
    return float(np.median(arr))


@dataclass
class MethodSummary:
    method: str
    k: object
    n: int
    final_mean: float
    final_std: float
    iterations_to_threshold: Optional[int]
    auc: float
    seed_iterations: dict


def summarize(curves: LearningCurveSet, threshold: float, metric: str = "mean_return") -> list:
    """Per method: final aggregate mean, first iteration at which the mean
    across seeds reaches ``threshold``, and trapezoid area under the mean."""
    out = []
    for m, k in curves.keys():
        iters, mean, std, n = curves.aggregate(m, k, metric)
        per_seed = {s: iterations_to_threshold(v, threshold) for s, v in curves.series(m, k, metric).items()}
        out.append(MethodSummary(m, k, n, float(mean[-1]), float(std[-1]),
                                 iterations_to_threshold(mean, threshold), trapezoid_auc(mean), per_seed))
    return out


def format_summary(rows: Sequence[MethodSummary]) -> str:
    lines = ["method,k,n,final_mean,final_std,iterations_to_threshold,median_seed_iterations,auc"]
    for r in rows:
        itt = "" if r.iterations_to_threshold is None else str(r.iterations_to_threshold)
        med = median_iterations(list(r.seed_iterations.values()))
        lines.append(",".join([r.method, format_k(r.k), str(r.n), _fmt(r.final_mean), _fmt(r.final_std),
                               itt, "inf" if med == np.inf else _fmt(med), _fmt(r.auc)]))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# config files
# --------------------------------------------------------------------------

_SECTIONS = {
    "env": {"name", "horizon"},
    "oracle": {f.name for f in dataclasses.fields(OracleSpec)},
    "thor": {"k", "seed", "method"} | (THOR_KEYS - {"hidden", "critic_hidden"}),
    "approx": {"hidden", "critic_hidden"},
    "experiment": {"methods", "seeds", "output_dir"},
}


def _coerce(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(like, tuple):
        return tuple(int(x) for x in text.replace(",", " ").split())
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def read_config(path: str, allow_experiment: bool = True) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SECTIONS or (sec == "experiment" and not allow_experiment):
            raise ConfigError(f"unknown config section [{sec}]")
        bad = set(cp[sec]) - _SECTIONS[sec]
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(bad)}")
    return cp


def spec_from_config(cp: configparser.ConfigParser) -> ExperimentSpec:
    """Experiment spec from parsed sections; values are type-checked."""
    try:
        env = cp["env"] if cp.has_section("env") else {}
        name = env.get("name", "mountain_car")
        horizon = int(env.get("horizon", 200))
        defaults = OracleSpec()
        okw = {}
        if cp.has_section("oracle"):
            for key, val in cp["oracle"].items():
                okw[key] = _coerce(val, getattr(defaults, key)) if getattr(defaults, key) is not None else val
        oracle = OracleSpec(**okw)
        tdef = ThorConfig()
        thor = {}
        if cp.has_section("thor"):
            for key, val in cp["thor"].items():
                if key in ("k", "seed", "method"):
                    continue
                thor[key] = _coerce(val, getattr(tdef, key))
        if cp.has_section("approx"):
            for key, val in cp["approx"].items():
                thor[key] = _coerce(val, getattr(tdef, key))
        methods, seeds, out_dir = DEFAULT_METHODS, tuple(range(25)), "results"
        if cp.has_section("thor") and "k" in cp["thor"]:
            mname = cp["thor"].get("method", "thor")
            methods = (MethodSpec(mname, cp["thor"]["k"], shaped=oracle.kind != "none"),)
            if "seed" in cp["thor"]:
                seeds = (int(cp["thor"]["seed"]),)
        if cp.has_section("experiment"):
            ex = cp["experiment"]
            if "methods" in ex:
                methods = tuple(parse_method(m) for m in ex["methods"].split(","))
            if "seeds" in ex:
                seeds = _parse_seeds(ex["seeds"])
            out_dir = ex.get("output_dir", out_dir)
        return ExperimentSpec(name, horizon, oracle, methods, seeds, out_dir, thor)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def _parse_seeds(text: str) -> tuple:
    """``0-24`` or ``1,2,3``."""
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(x) for x in text.split("-"))
        return tuple(range(lo, hi + 1))
    return tuple(int(x) for x in text.split(","))
