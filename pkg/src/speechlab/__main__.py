"""Command-line entry: speechlab <command> --config path [options]."""

from __future__ import annotations

import argparse
import sys

from .config import COMMANDS, ConfigError, load_config
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechlab",
                                     description="Desk-scale speech SSL experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=f"run a {command} config")
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--out-dir", default=None, help="override the config's out_dir")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace the config seed")
        p.add_argument("--preset", default=None, help="replace the model preset")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, out_dir=args.out_dir,
                             seed_override=args.seed_override,
                             preset_override=args.preset)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if config.command != args.command:
        print(f"config error: command: config says {config.command!r} but "
              f"{args.command!r} was invoked", file=sys.stderr)
        return 2
    try:
        status, run_dir = run(config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 1
    print(run_dir)
    return status


if __name__ == "__main__":
    sys.exit(main())
