"""Command line entry point: ``qotgd <command> --config PATH [--out DIR] [--threads N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiments import TASKS, USAGE, ConfigError, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qotgd",
        description="Gradient ascent for quadratically regularized optimal transport.",
        epilog=USAGE,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + TASKS:
        helptext = "run every task listed in the config" if name == "run" else f"run the {name} task"
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True,
                       help="config file, or the name of a bundled one (exp1.cfg, exp2.cfg, ...)")
        p.add_argument("--out", default=None, help="output directory (default out/<name>)")
        p.add_argument("--threads", type=int, default=None,
                       help="independent runs solved concurrently")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        tasks = None if args.command == "run" else [args.command]
        out, failures = run_experiment(cfg, args.out, tasks=tasks, threads=args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"artifacts written to {out}")
    if failures:
        print("failed runs:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
