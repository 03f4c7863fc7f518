"""Command-line entry point.

Configuration is a flat key=value text file; every key can be overridden
by a CLI flag of the same name (dashes for underscores).  Subcommands:

  sweep     run an accuracy experiment, write CSV
  trace     solve one random instance, write the weight trajectory CSV
  pretrain  pretrain a DBN and save a checkpoint
  eval      evaluate a checkpoint on the test set
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from dbnsat.harness import (
    ExperimentConfig,
    emit_trace,
    make_sampler,
    load_reduced,
    run_experiment,
    write_rows_csv,
    write_trace_csv,
)
from dbnsat.training import (
    DbnModel,
    PretrainConfig,
    SupervisedConfig,
    evaluate,
    load_model,
    pretrain_dbn,
    save_model,
)

_TUPLE_KEYS = {"samplers", "pretrain_iters", "backprop_iters", "seeds", "layer_sizes"}


def parse_config_file(path):
    values = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def _coerce(key, value):
    if key in _TUPLE_KEYS:
        parts = [p for p in str(value).split(",") if p]
        if key == "samplers":
            return tuple(parts)
        return tuple(int(p) for p in parts)
    target = {f.name: f.type for f in fields(ExperimentConfig)}.get(key)
    if target in ("int", int):
        return int(value)
    if target in ("float", float):
        return float(value)
    return value


def build_experiment_config(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    overrides = {
        "experiment": getattr(args, "experiment", None),
        "samplers": args.sampler,
        "pretrain_iters": args.pretrain_iters,
        "backprop_iters": args.backprop_iters,
        "minibatch": args.minibatch,
        "restart_patience": args.restart_patience,
        "train_size": args.train_size,
        "test_size": args.test_size,
        "seeds": args.seed,
        "train_images": args.train_images,
        "train_labels": args.train_labels,
        "test_images": args.test_images,
        "test_labels": args.test_labels,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", help="comma-separated seed list")
    p.add_argument("--out", required=True, help="output file path")
    p.add_argument("--sampler", help="comma list of {cd,qubo-best,qubo-avg,exact}")
    p.add_argument("--pretrain-iters", dest="pretrain_iters")
    p.add_argument("--backprop-iters", dest="backprop_iters")
    p.add_argument("--minibatch", type=int)
    p.add_argument("--restart-patience", dest="restart_patience", type=int)
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.add_argument("--train-images", dest="train_images")
    p.add_argument("--train-labels", dest="train_labels")
    p.add_argument("--test-images", dest="test_images")
    p.add_argument("--test-labels", dest="test_labels")
    p.add_argument("--timings", action="store_true", help="include wall times in CSV")


def make_parser():
    parser = argparse.ArgumentParser(prog="dbnsat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run an accuracy sweep, write CSV")
    p.add_argument(
        "--experiment",
        choices=("minibatch_sweep", "fullbatch_sweep", "bn_relu_comparison"),
    )
    _add_common(p)

    p = sub.add_parser("trace", help="write one solver weight trajectory as CSV")
    _add_common(p)

    p = sub.add_parser("pretrain", help="pretrain a DBN, save a checkpoint")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True, help="checkpoint path")
    return parser


def cmd_sweep(args):
    cfg = build_experiment_config(args)
    rows = run_experiment(cfg)
    write_rows_csv(args.out, cfg, rows, include_timings=args.timings)


def cmd_trace(args):
    cfg = build_experiment_config(args)
    cfg.experiment = "solver_trace"
    rows, _ = emit_trace(cfg)
    write_trace_csv(args.out, cfg, rows)


def cmd_pretrain(args):
    cfg = build_experiment_config(args)
    (train_x, _), _ = load_reduced(cfg)
    rng = np.random.default_rng(cfg.seeds[0])
    model = DbnModel.initialize(cfg.layer_sizes, rng, num_classes=10)
    pre_cfg = PretrainConfig(
        iterations=max(cfg.pretrain_iters),
        sampler=make_sampler(cfg.samplers[0], cfg),
        learning_rate=cfg.learning_rate,
    )
    model, _ = pretrain_dbn(model, train_x, pre_cfg, rng)
    save_model(model, args.out, config={"sampler": cfg.samplers[0], "seed": cfg.seeds[0]})


def cmd_eval(args):
    cfg = build_experiment_config(args)
    _, (test_x, test_y) = load_reduced(cfg)
    model, _ = load_model(args.model)
    acc = evaluate(model, test_x, test_y, SupervisedConfig(mini_batch=cfg.minibatch))
    with open(args.out, "w") as fh:
        fh.write(f"accuracy,{acc:.6f}\n")
    print(f"accuracy {acc:.6f}")


def main(argv=None):
    args = make_parser().parse_args(argv)
    handlers = {
        "sweep": cmd_sweep,
        "trace": cmd_trace,
        "pretrain": cmd_pretrain,
        "eval": cmd_eval,
    }
    try:
        handlers[args.command](args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
