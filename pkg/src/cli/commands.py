# /src/cli/commands.py

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from src.cli.handlers import get_scenario_handler
from src.core.errors import EitCoolError
from src.utils.config.settings import settings
from src.utils.resources.logger import logger


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _positive_float(value: str) -> float:
    number = float(value)
    if number <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eitcool", description=settings.get("app.description"))
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.get('app.version', '1.0.0')}")
    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="Run a scenario file and write CSV outputs")
    run.add_argument("scenario", type=Path, help="Scenario YAML file")
    run.add_argument("--out", type=Path, default=None, help="Output directory (default: runner.output_dir)")
    run.add_argument("--workers", type=_positive_int, default=None, help="Worker threads (default: EITCOOL_WORKERS or 1)")
    run.add_argument("--fock", type=_positive_int, default=None, help="Fock cutoff for master-equation runs")
    run.add_argument("--tolerance", type=_positive_float, default=None, help="Master-equation integrator tolerance (rtol; atol = rtol / 100)")
    run.add_argument("--nbar-tolerance", type=_positive_float, default=None, help="n-bar tolerance for the t_cut rule")
    run.add_argument("--gnuplot-stub", action="store_true", help="Write a .gp plot script next to every CSV")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.fock is not None:
        settings.set("engines.fock_dim", args.fock)
    if args.tolerance is not None:
        settings.set("engines.me_rtol", args.tolerance)
        settings.set("engines.me_atol", args.tolerance / 100.0)
    if args.nbar_tolerance is not None:
        settings.set("thermometry.nbar_tolerance", args.nbar_tolerance)
    try:
        handler = get_scenario_handler(args.out, args.workers, args.gnuplot_stub)
        summaries = handler.run(args.scenario)
    except EitCoolError as e:
        logger.error(f"{type(e).__name__}: {e}", exit_code=e.exit_code)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True, default=float))
    return 0
