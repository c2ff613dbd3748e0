"""Command-line entry points: train, sweep, report, grid.

Exit codes: 0 success, 1 usage/config error, 2 run failure.
"""

import argparse
import json
import os
import sys

from .data import DataError, subset_fraction
from .harness import (
    ConfigError,
    emit_results_table,
    load_datasets,
    parse_config,
    read_results,
    run_dir_name,
    run_experiment,
    run_single,
    export_image_grid,
)
from .trainer import METHODS, load_state


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="seccgan",
        description="Co-supervised GAN/classifier training and experiment sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a single (method, fraction, seed) cell")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=METHODS, help="default: first method in the config")
    p.add_argument("--fraction", type=float, help="default: first fraction in the config")
    p.add_argument("--seed", type=int, help="default: first seed in the config")
    p.add_argument("--out", help="output directory (default: out_dir from the config)")

    p = sub.add_parser("sweep", help="run the full fractions x methods x seeds grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="render results from a sweep directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")

    p = sub.add_parser("grid", help="export a class-per-column image grid from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args):
    spec = parse_config(args.config)
    method = args.method or spec.methods[0]
    fraction = args.fraction if args.fraction is not None else spec.fractions[0]
    seed = args.seed if args.seed is not None else spec.seeds[0]
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"--fraction must be in (0, 1], got {fraction}")
    if seed < 0:
        raise ConfigError(f"--seed must be >= 0, got {seed}")
    out_dir = args.out or spec.out_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")

    train_full, test_set = load_datasets(spec)
    subset = subset_fraction(train_full, fraction, seed)
    run_dir = os.path.join(out_dir, "runs", run_dir_name(method, fraction, seed))
    row = run_single(spec, method, fraction, seed, subset, test_set, run_dir)
    print(f"run dir: {run_dir}")
    print(f"final test accuracy: {row.accuracy:.4f}")
    return 0


def _cmd_sweep(args):
    spec = parse_config(args.config)
    table = run_experiment(spec, out_dir=args.out, log=lambda s: print(s, flush=True))
    markdown = emit_results_table(table, "markdown")
    csv_text = emit_results_table(table, "csv")
    with open(os.path.join(args.out, "table.md"), "w") as f:
        f.write(markdown)
    with open(os.path.join(args.out, "table.csv"), "w") as f:
        f.write(csv_text)
    with open(os.path.join(args.out, "results.json"), "w") as f:
        json.dump(
            [
                {"fraction": r.fraction, "method": r.method, "seed": r.seed,
                 "accuracy": r.accuracy, "error": r.error}
                for r in table.rows
            ],
            f, indent=2, sort_keys=True,
        )
        f.write("\n")
    print(markdown, end="")
    failures = [r for r in table.rows if r.error is not None]
    for r in failures:
        print(f"failed: {run_dir_name(r.method, r.fraction, r.seed)}: {r.error}",
              file=sys.stderr)
    return 0


def _cmd_report(args):
    table = read_results(args.in_dir)
    print(emit_results_table(table, args.format), end="")
    return 0


def _cmd_grid(args):
    if args.per_class <= 0:
        raise ConfigError(f"--per-class must be > 0, got {args.per_class}")
    state = load_state(args.checkpoint)
    export_image_grid(state.generator, args.per_class, args.out, seed=args.seed)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "grid": _cmd_grid,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; 1 is the documented usage code
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
