"""Command line entry point: ``awac-lab {generate-data,train,evaluate,compare}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .envs import make_env
from .harness import (
    ALGOS,
    ExperimentConfig,
    compare,
    dataset_summary,
    load_metrics,
    load_policy,
    make_dataset,
    output_root,
    run_experiment,
)
from .replay import save_dataset
from .training import evaluate


def _config(args) -> ExperimentConfig:
    overrides = {"env": args.env, "algo": getattr(args, "algo", None), "budget": getattr(args, "budget", None),
                 "dataset": getattr(args, "dataset", None)}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _out_dir(args, config: ExperimentConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    return output_root(config.out if config else None)


def cmd_generate_data(args) -> int:
    config = _config(args)
    if args.seed is not None:
        config.data_params["seed"] = args.seed
    if args.protocol:
        config.data_params["protocol"] = args.protocol
    if args.counts:
        config.data_params["counts"] = tuple(int(c) for c in args.counts.split(","))
    kw = config.data_kwargs()
    ds = make_dataset(config)
    out = _out_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{config.env}_{kw['protocol']}_seed{kw['seed']}.dset"
    save_dataset(path, ds)
    print(json.dumps({"path": str(path), **dataset_summary(ds)}))
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    results = run_experiment(config, out_dir=_out_dir(args, config))
    status = 0
    for res in results:
        last = res.records[-1] if res.records else None
        print(json.dumps({"seed": res.seed, "metrics": str(res.metrics_path),
                          "checkpoint": str(res.checkpoint_path) if res.checkpoint_path else None,
                          "final_success_rate": last.success_rate if last else None,
                          "error": res.error}))
        status |= res.error is not None
    return status


def cmd_evaluate(args) -> int:
    config = _config(args)
    env = make_env(config.env, seed=0, **config.env_kwargs())
    policy = load_policy(args.checkpoint, env)
    seed = args.seed if args.seed is not None else 0
    print(json.dumps(evaluate(policy, env, args.episodes, seed)))
    return 0


def cmd_compare(args) -> int:
    series = [load_metrics(p) for p in args.metrics]
    report = compare(series, threshold=args.threshold, metric=args.metric, budget=args.budget)
    sys.stdout.write(report.to_text())
    if args.out:
        report.write(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awac-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, algo=True):
        p.add_argument("--config", help="flat 'section.key = value' experiment file")
        p.add_argument("--env", choices=["chain", "pointmass"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: $AWAC_LAB_OUT, then the config's run.out)")
        if algo:
            p.add_argument("--algo", choices=ALGOS)
            p.add_argument("--dataset", help="dataset file from generate-data")
            p.add_argument("--budget", type=int, help="online environment steps")

    g = sub.add_parser("generate-data", help="roll out the expert/clone or OU protocol and save a dataset")
    common(g, algo=False)
    g.add_argument("--protocol", choices=["expert_bc", "random_ou"])
    g.add_argument("--counts", help="comma-separated trajectory counts, e.g. 15,100")
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="offline pretraining then online fine-tuning, one CSV per seed")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="mean-action evaluation of a saved checkpoint")
    common(e, algo=False)
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="median/IQR curves and summary table over metrics CSVs")
    c.add_argument("metrics", nargs="+")
    c.add_argument("--threshold", type=float, default=0.9)
    c.add_argument("--metric", default="success_rate")
    c.add_argument("--budget", type=int, help="horizon used for the early-dip window")
    c.add_argument("--out", help="directory for report.txt and per-algorithm curve CSVs")
    c.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
