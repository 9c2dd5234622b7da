"""
Command-line interface for the vdt-qoe pipeline.

Every subcommand runs one pipeline stage against the artifact directory and
prints a JSON summary on stdout. Errors are printed as JSON on stderr and
mapped to the exit code of their exception class.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from ..core.artifacts import dumps_canonical
from ..core.config import get_settings
from ..core.exceptions import handle_exception
from .commands import COMMANDS
from .dependencies import build_context

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Construct the argument parser with one subparser per stage."""
    settings = get_settings()
    parser = argparse.ArgumentParser(prog=settings.APP_TITLE, description=settings.APP_DESCRIPTION)
    parser.add_argument("--config", help="INI run configuration file")
    parser.add_argument("--seed", type=int, help="Global seed; re-derives stage seeds not set in the config")
    parser.add_argument("--out", help="Artifact directory")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")

    subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def configure_logging(verbose: bool = False) -> None:
    """Send log records to stderr so stdout carries only the JSON summary."""
    settings = get_settings()
    level = logging.DEBUG if verbose else getattr(logging, settings.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=settings.LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run the selected stage and return the exit code.

    Returns:
        0 on success, otherwise the exit code of the raised error
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        context = build_context(args.config, args.seed, args.out)
        summary = args.handler(args, context)
    except Exception as e:
        payload = handle_exception(e)
        logger.error(f"{args.command} failed: {payload['message']}", exc_info=payload["error_code"] == "INTERNAL_ERROR")
        sys.stderr.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
        return int(payload["exit_code"])
    sys.stdout.write(dumps_canonical({"command": args.command, "status": "ok", **summary}))
    return 0
