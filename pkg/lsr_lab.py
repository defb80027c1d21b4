"""lsr-lab command-line entry point.

    python lsr_lab.py run preset:theorem1
    python lsr_lab.py sweep configs/drop.json --workers 4
    python lsr_lab.py estimate preset:theorem2
    python lsr_lab.py verify preset:ordering_appropriate
    python lsr_lab.py report results/theorem1
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.presets import list_presets
from config.settings import DEFAULT_LOG_LEVEL, configure_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsr_lab",
        description="Label-smoothing SGD experiments: LSR, TSLA, and the one-hot baseline.",
        epilog=f"Built-in presets (use preset:<name>): {', '.join(list_presets())}",
    )
    parser.add_argument("--log-level", default=DEFAULT_LOG_LEVEL, help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "run every algorithm of a config once per repeat"),
        ("sweep", "run every sweep point of a config"),
        ("verify", "run a config and check the measured stationarity against the bounds"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="config file path or preset:<name>")
        cmd.add_argument("--output-dir", help="override the config's output directory")
        cmd.add_argument("--workers", type=int, help="worker processes (default: config / env)")

    cmd = sub.add_parser("estimate", help="estimate L, mu, sigma2, delta and derived schedules")
    cmd.add_argument("config", help="config file path or preset:<name>")
    cmd.add_argument("--output-dir", help="where constants.txt goes")

    cmd = sub.add_parser("report", help="rebuild the comparison table of a result directory")
    cmd.add_argument("result_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "run":
        from commands import run
        return run.handle(args.config, args.output_dir, args.workers)
    if args.command == "sweep":
        from commands import sweep
        return sweep.handle(args.config, args.output_dir, args.workers)
    if args.command == "verify":
        from commands import verify
        return verify.handle(args.config, args.output_dir, args.workers)
    if args.command == "estimate":
        from commands import estimate
        return estimate.handle(args.config, args.output_dir)
    from commands import report
    return report.handle(args.result_dir)


if __name__ == "__main__":
    sys.exit(main())
