"""Command-line entry point.

Subcommands: ``run`` (one policy, all seeds), ``ablate`` (the ablation
suite), ``report`` (rebuild report.md from aggregate.csv files) and
``gen-data`` (export a synthetic stream to CSV). Exit codes: 0 success,
1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import ConfigError, ReportError
from .stream import write_csv


def _parse_seeds(text: str) -> tuple:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError([f"--seed-override must be comma-separated integers, got {text!r}"])


def _load(args) -> harness.RunConfig:
    config = harness.load_config(args.config)
    if args.seed_override:
        config = replace(config, seeds=_parse_seeds(args.seed_override))
    if args.ticks:
        config = replace(config, tick_logs=True)
    return config


def cmd_run(args) -> int:
    config = _load(args)
    result = harness.run(config, args.out_dir)
    print(f"wrote {Path(args.out_dir) / 'aggregate.csv'}")
    row = result.aggregate_row
    print(f"{row['method']} on {row['dataset']}: "
          f"accuracy {row['accuracy_mean']} ± {row['accuracy_std']}, "
          f"avg window {row['avg_window_mean']}, stability {row['stability_mean']}")
    return 0


def cmd_ablate(args) -> int:
    config = _load(args)
    results = harness.run_ablations(config, args.out_dir)
    for name, result in results:
        row = result.aggregate_row
        print(f"{name}: accuracy {row['accuracy_mean']}, stability {row['stability_mean']}")
    print(f"wrote {Path(args.out_dir) / 'report.md'}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.aggregates:
        rows.extend(harness.read_aggregate(path))
    agg, rep = harness.emit_report(rows, args.out_dir)
    print(f"wrote {agg} and {rep}")
    return 0


def cmd_gen_data(args) -> int:
    config = harness.load_config(args.config)
    stream = config.stream
    if stream.kind != "synthetic":
        raise ConfigError(["gen-data needs a synthetic stream section"])
    seed = stream.seed if stream.seed is not None else config.seeds[0]
    events = stream.events(seed)
    write_csv(events, args.out)
    print(f"wrote {args.out} ({stream.n} events, d={stream.d}, seed={seed})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlwindow",
        description="Adaptive sliding-window benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--out-dir", default="results", help="output directory")
        p.add_argument("--seed-override", default=None,
                       help="comma-separated seeds replacing run.seeds")
        p.add_argument("--ticks", action="store_true",
                       help="also write per-tick logs (ticks_<method>_<seed>.csv)")

    p_run = sub.add_parser("run", help="run one policy over all seeds")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="run the ablation suite")
    add_common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_report = sub.add_parser("report", help="combine aggregate.csv files into a report")
    p_report.add_argument("aggregates", nargs="+", help="aggregate.csv files")
    p_report.add_argument("--out-dir", default="results", help="output directory")
    p_report.set_defaults(func=cmd_report)

    p_gen = sub.add_parser("gen-data", help="export the synthetic stream to CSV")
    p_gen.add_argument("--config", required=True, help="YAML run config")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
