# main.py
"""
Runner for the bosonic-stimulation random bit simulator.

Usage:
- python main.py generate --config run.env --set COUNT=100000
- python main.py trajectories --set RUNS=4 --set INITIAL_BLUE=3 --set INITIAL_RED=3
- python main.py densities | verify | battery [--input out/qrng.txt] | bench

Configuration is a KEY=VALUE file (dotenv format); every key can be
overridden with --set. Defaults are listed in --help.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from app import cli
from app.config import QrngConfig, parse_overrides
from app.errors import QrngError, RunError

LOG_LEVEL = os.environ.get("QRNG_LOG_LEVEL", "WARNING")


def _defaults_epilog() -> str:
    lines = ["configuration keys (default):"]
    for name, info in QrngConfig.model_fields.items():
        lines.append(f"  {name.upper():<20} {info.default!r}")
    lines.append("")
    lines.append("exit codes: 0 ok, 1 run error, 2 usage, 3 noise gate or edge-atom refusal, 4 verification failed, "
                 "5 I/O error, 6 configuration error")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="KEY=VALUE configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--log-level", default=LOG_LEVEL)

    parser = argparse.ArgumentParser(
        description="Bosonic-stimulation (Polya urn) random bit simulator",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a bitstream, sidecar and config echo")
    sub.add_parser("trajectories", parents=[common], help="per-run fraction-vs-step CSVs")
    sub.add_parser("densities", parents=[common], help="density CSV and quantile table")
    verify = sub.add_parser("verify", parents=[common], help="exact oracle and closed-form checks")
    verify.add_argument("--perturb", type=float, default=0.0,
                        help="scale blue amplitudes by (1+PERTURB); a non-zero value must fail")
    battery = sub.add_parser("battery", parents=[common], help="built-in randomness tests")
    battery.add_argument("--input", default=None, help="bitstream file (.txt ASCII or raw); default: generate")
    sub.add_parser("bench", parents=[common], help="simulator throughput")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = QrngConfig.load(args.config, parse_overrides(args.set))
    except FileNotFoundError as exc:
        print(f"error: {exc.strerror}: {exc.filename}", file=sys.stderr)
        return cli.EXIT_IO_ERROR
    except (ValidationError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return cli.EXIT_CONFIG_ERROR

    try:
        if args.command == "generate":
            return cli.cmd_generate(cfg)
        if args.command == "trajectories":
            return cli.cmd_trajectories(cfg)
        if args.command == "densities":
            return cli.cmd_densities(cfg)
        if args.command == "verify":
            return cli.cmd_verify(cfg, args.perturb)
        if args.command == "battery":
            return cli.cmd_battery(cfg, args.input)
        if args.command == "bench":
            return cli.cmd_bench(cfg)
    except OSError as exc:
        print(f"I/O error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return cli.EXIT_IO_ERROR
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return cli.EXIT_RUN_ERROR
    except QrngError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return cli.EXIT_CONFIG_ERROR
    return cli.EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
