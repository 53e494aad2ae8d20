"""``couette`` command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 a ``compare``
tolerance failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..lattice import ParameterError
from ..oracle import CapacityError
from . import config as cfg
from .commands import COMMANDS, format_compare

EXIT_OK, EXIT_USAGE, EXIT_TOLERANCE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="couette", description="Three-state exclusion process on a sheared strip: simulation, moment equations, stationary profiles.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides 'out')")
    parser.add_argument("--workers", type=int, help="parallel replica workers (overrides run.workers)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set params.S=16 (repeatable)")
    parser.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        config = cfg.load(args.config, tuple(args.overrides), seed=args.seed,
                          out=args.out, workers=args.workers)
    except (cfg.ConfigError, ParameterError) as exc:
        print(f"couette: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK

    try:
        result = COMMANDS[args.command](config)
    except (ParameterError, CapacityError, ValueError) as exc:
        print(f"couette {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"couette {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "compare":
        sys.stdout.write(format_compare(result))
        return EXIT_OK if result["pass"] else EXIT_TOLERANCE
    print(f"couette {args.command}: wrote results to {config.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
