"""
flowgraph command-line application
Discrete flow matching for categorical graph generation: dataset generation,
training, sampling, reward guidance and evaluation.
"""

import argparse
import logging
import sys
from typing import List, Optional

from flowgraph.commands import COMMANDS
from flowgraph.core.exceptions import FlowGraphError
from flowgraph.middleware.logging import CommandLoggingMiddleware, setup_logging

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowgraph",
        description="Discrete flow matching engine for categorical graph generation",
    )
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def global_exception_handler(exc: Exception) -> int:
    """Map an escaped exception to the process exit code"""
    logger = logging.getLogger(__name__)
    if isinstance(exc, FlowGraphError):
        logger.error(f"{type(exc).__name__}: {str(exc)}")
        return exc.exit_code
    logger.error(f"Global exception: {str(exc)}", exc_info=True)
    return RUNTIME_ERROR


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        # argparse exits 0 for --help and 2 for usage errors
        return 0 if exit_request.code in (0, None) else USAGE_ERROR

    try:
        setup_logging(args.log_level)
        return CommandLoggingMiddleware(args.handler, args.command_name)(args)
    except Exception as exc:
        return global_exception_handler(exc)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
