"""``bandwig`` command line.

    bandwig <experiment> --config run.yaml [--out DIR] [--seed N] [--workers N] [--fresh]
    bandwig run --config run.yaml ...        # experiment taken from the config
    bandwig saddle --E 1.0 [--eta 0.1]       # saddle-point package as JSON
    bandwig schema                           # print the config JSON schema

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..analytics import DEFAULT_ETA, saddle_data
from .config import EXPERIMENTS, ConfigError, load_config, load_schema
from .runner import TaskFailure, run

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandwig", description="Random band matrix experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", *EXPERIMENTS):
        p = sub.add_parser(name, help="run the experiment described by the config" if name == "run" else f"run a {name} experiment")
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--workers", type=int, help="worker processes (overrides the config)")
        p.add_argument("--fresh", action="store_true", help="discard checkpoints from an earlier run")
    p = sub.add_parser("saddle", help="print the saddle-point data at one energy")
    p.add_argument("--E", type=float, required=True)
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return EXIT_OK
    if args.command == "saddle":
        try:
            data = saddle_data(args.E, args.eta)
        except ValueError as exc:
            print(f"error: E: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(data.to_json(), indent=2))
        return EXIT_OK

    overrides = {"out": args.out, "base_seed": args.seed, "workers": args.workers}
    try:
        cfg = load_config(args.config, overrides)
        if args.command != "run" and cfg.experiment != args.command:
            raise ConfigError("experiment", f"config describes {cfg.experiment!r}, not {args.command!r}")
        result = run(cfg, fresh=args.fresh)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TaskFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        print(f"replay: task_id={exc.task_id} seed={exc.seed}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, MemoryError, ArithmeticError, ValueError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(json.dumps(result.report, indent=2, sort_keys=True))
    if cfg.checks and not result.passed:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
