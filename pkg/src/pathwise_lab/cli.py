"""Command-line entry point: ``pathwise-lab run|validate``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import InvalidArgument
from .experiments import EXIT_INVALID, EXIT_OK, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathwise-lab", description="Pathwise hedging and arbitrage experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config and write CSV artifacts")
    run.add_argument("config", help="JSON experiment config")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--threads", type=int, default=1, help="worker threads (recorded in the manifest)")
    val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    val.add_argument("config", help="JSON experiment config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run" and args.seed is not None:
            with open(args.config) as fh:
                raw = json.load(fh)
            raw["seed"] = args.seed
            cfg = load_config(raw)
        else:
            cfg = load_config(args.config)
        if args.command == "run" and args.threads < 1:
            raise InvalidArgument("--threads must be at least 1")
    except (InvalidArgument, OSError, json.JSONDecodeError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print(json.dumps(cfg, indent=2, sort_keys=True))
        return EXIT_OK
    result = run_experiment(cfg, args.out, args.threads)
    status = result.manifest["status"]
    print(f"{cfg['experiment']}: {status} -> {result.output_dir}")
    if "error" in result.manifest:
        print(result.manifest["error"], file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
