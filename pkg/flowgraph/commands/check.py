"""
Check command: built-in oracle suite
"""

import argparse
import json
import logging
from pathlib import Path

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import ArtifactIOError
from flowgraph.services.oracles import run_checks

logger = logging.getLogger(__name__)

CHECK_FAILED = 2


def register(subparsers) -> None:
    parser = subparsers.add_parser("check", help="Run gradient, equivariance and consistency oracles")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--trials", type=int, default=100, help="Random permutations for the equivariance check")
    parser.add_argument("--output", default=None, help="Write the results as JSON")
    parser.set_defaults(handler=handle, command_name="check")


def handle(args: argparse.Namespace) -> int:
    results = run_checks(streams.resolve_seed(args.seed), args.trials)
    if args.output:
        path = Path(args.output)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps([r.model_dump() for r in results], indent=2), encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write check results: {e.strerror}", {"path": str(path)})

    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"Checks failed: {', '.join(failed)}")
        return CHECK_FAILED
    logger.info(f"All {len(results)} checks passed")
    return 0
