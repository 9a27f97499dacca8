"""Command-line entry points. Exit codes: 0 success, 2 config error, 3 run failure."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_verify_theorems(args) -> int:
    from .dp import theorem2_sweep, verify_theorem1, verify_theorem2_counterexample

    ok = True
    for g in args.gammas:
        r = verify_theorem1(g, args.delta, args.chain_len)
        ok &= r.holds
        print(f"lower-bound gamma={g} gap={r.gap_observed:.10g} bound={r.bound_value:.10g} "
              f"{'PASS' if r.holds else 'FAIL'}")
    for k in args.ks:
        r = verify_theorem2_counterexample(args.gammas[len(args.gammas) // 2], args.delta, args.chain_len, k)
        ok &= r.holds
        print(f"upper-bound counterexample k={k} gap={r.gap_observed:.10g} bound={r.bound_value:.10g} "
              f"{'PASS' if r.holds else 'FAIL'}")
    rows = theorem2_sweep(args.gammas, args.epsilons, args.ks, args.num_mdps, args.seed)
    bad = [r for r in rows if not r.holds]
    for g in args.gammas:
        for e in args.epsilons:
            means = [np.mean([r.gap for r in rows if r.gamma == g and r.eps == e and r.k == k]) for k in args.ks]
            print(f"sweep gamma={g} eps={e} mean_gap_by_k=" + ",".join(f"{m:.6g}" for m in means))
    for r in bad:
        print("VIOLATION " + json.dumps({"gamma": r.gamma, "eps": r.eps, "k": r.k, "gap": r.gap,
                                         "bound": r.bound, "instance": r.instance, "dump": r.dump}))
    print(f"random-MDP rows={len(rows)} violations={len(bad)}")
    return EXIT_OK if ok and not bad else EXIT_FAILURE


def cmd_make_demos(args) -> int:
    from .harness import make_demos
    from .mdp import write_trajectories

    demos = make_demos(args.env, args.horizon, args.expert, args.episodes, args.seed)
    write_trajectories(args.out, demos.trajectories)
    steps = demos.num_steps
    print(f"wrote {demos.count} episodes ({steps} steps) to {args.out}")
    return EXIT_OK


def cmd_learn_oracle(args) -> int:
    from .envs import make_env
    from .mdp import read_trajectories
    from .oracle import DemoSet, fit_mc, fit_td, save_oracle

    demos = DemoSet(read_trajectories(args.demos))
    box = None
    if args.env:
        env = make_env(args.env)
        box = (env.observation_low, env.observation_high)
    rng = np.random.default_rng(args.seed)
    if args.method == "td":
        oracle = fit_td(demos, args.gamma, lam=args.lam, lr=args.lr, epochs=args.epochs, rng=rng,
                        backing=args.backing, lr_schedule=args.lr_schedule, input_box=box)
    else:
        oracle = fit_mc(demos, args.gamma, epochs=args.epochs, rng=rng, backing=args.backing, input_box=box)
    save_oracle(args.out, oracle)
    report = args.report or os.path.splitext(args.out)[0] + "_report.csv"
    oracle.report.write_csv(report)
    print(f"oracle written to {args.out}; report {report}; epochs={oracle.report.epochs} "
          f"final_td_error={oracle.report.final_td_error:.6g}")
    return EXIT_OK


def _load_spec(path: str, allow_experiment: bool):
    from .harness import read_config, spec_from_config

    return spec_from_config(read_config(path, allow_experiment=allow_experiment))


def cmd_train(args) -> int:
    from .algo import format_k, thor_train
    from .approx import save_params
    from .harness import LearningCurveSet, build_oracle, run_config

    spec = _load_spec(args.config, allow_experiment=False)
    method, seed = spec.methods[0], spec.seeds[0]
    oracle = build_oracle(spec.oracle, spec.env_name, spec.horizon) if method.shaped else None
    out_dir = args.output_dir or spec.output_dir
    os.makedirs(out_dir, exist_ok=True)
    res = thor_train(run_config(spec, method, seed, oracle))
    curves = LearningCurveSet()
    curves.add(method.name, method.k, seed, res.curve)
    raw, _ = curves.write(out_dir)
    params_path = os.path.join(out_dir, f"policy_{method.name}_k{format_k(method.k)}_seed{seed}.txt")
    save_params(params_path, res.params)
    last = res.curve[-1] if res.curve else None
    if last is not None:
        print(f"iterations={last.iteration} mean_return={last.mean_return:.6g} "
              f"success_rate={last.success_rate:.3g}")
    print(f"curve {raw}; parameters {params_path}")
    return EXIT_OK


def cmd_run_experiment(args) -> int:
    import dataclasses

    from .harness import format_summary, run_experiment, summarize

    spec = _load_spec(args.config, allow_experiment=True)
    if args.output_dir:
        spec = dataclasses.replace(spec, output_dir=args.output_dir)
    curves = run_experiment(spec, progress=lambda m, s: logging.info("finished %s seed %s", m.label, s))
    print(format_summary(summarize(curves, args.threshold)))
    for f in curves.failures:
        print(f"FAILED {f.method} k={f.k} seed={f.seed}: {f.error}", file=sys.stderr)
    return EXIT_FAILURE if curves.failures else EXIT_OK


def cmd_summarize(args) -> int:
    from .harness import format_summary, read_curves, summarize

    curves = read_curves(args.curves)
    print(format_summary(summarize(curves, args.threshold, args.metric)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thor", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify-theorems", help="check the lookahead lower and upper bounds")
    v.add_argument("--gammas", type=_floats, default=[0.5, 0.9, 0.99])
    v.add_argument("--epsilons", type=_floats, default=[0.1, 0.2, 0.5])
    v.add_argument("--ks", type=_ints, default=[1, 2, 5, 10])
    v.add_argument("--num-mdps", type=int, default=100)
    v.add_argument("--chain-len", type=int, default=200)
    v.add_argument("--delta", type=float, default=0.01)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_theorems)

    d = sub.add_parser("make-demos", help="roll out a scripted expert")
    d.add_argument("--env", required=True)
    d.add_argument("--expert", default="optimal", help="optimal or degraded(p)")
    d.add_argument("--episodes", type=int, default=50)
    d.add_argument("--horizon", type=int, default=None)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_make_demos)

    o = sub.add_parser("learn-oracle", help="fit a cost-to-go oracle to demonstrations")
    o.add_argument("--demos", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--report", default=None)
    o.add_argument("--method", choices=["td", "mc"], default="td")
    o.add_argument("--gamma", type=float, default=0.99)
    o.add_argument("--lam", type=float, default=0.9)
    o.add_argument("--lr", type=float, default=0.1)
    o.add_argument("--lr-schedule", choices=["constant", "visit"], default="constant")
    o.add_argument("--epochs", type=int, default=100)
    o.add_argument("--backing", choices=["auto", "tabular", "mlp"], default="auto")
    o.add_argument("--env", default=None, help="take network input scaling from this env's box")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_learn_oracle)

    t = sub.add_parser("train", help="train one policy from a config file")
    t.add_argument("config")
    t.add_argument("--output-dir", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("run-experiment", help="multi-seed sweep from a config file")
    e.add_argument("config")
    e.add_argument("--output-dir", default=None)
    e.add_argument("--threshold", type=float, default=-150.0)
    e.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("summarize", help="summary statistics of a curves CSV")
    s.add_argument("curves")
    s.add_argument("--threshold", type=float, required=True)
    s.add_argument("--metric", default="mean_return", choices=["mean_return", "success_rate", "shaped_return"])
    s.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    from .errors import ConfigError, ThorError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ThorError, ArithmeticError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
