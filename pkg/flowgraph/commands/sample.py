"""
Sample command
"""

import argparse
import logging
from pathlib import Path

from flowgraph.commands.common import add_common_options, option, require, resolve_config, resolve_prior, resolve_threads
from flowgraph.core import rng as streams
from flowgraph.services.checkpoint import checkpoint_hash, load_checkpoint
from flowgraph.services.datasets import write_graphs
from flowgraph.services.manifest import build_manifest, write_manifest
from flowgraph.services.sampler import sample

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("sample", help="Generate graphs from a trained checkpoint")
    add_common_options(parser)
    option(parser, "--checkpoint", "checkpoint")
    option(parser, "--prior", "prior")
    option(parser, "--data", "data", help="Build the prior from these graphs when --prior is absent")
    option(parser, "--output", "output", help="Sample file (JSON Lines)")
    option(parser, "--n-samples", "sample.n_samples", type=int)
    option(parser, "--n-steps", "sample.n_steps", type=int)
    option(parser, "--q-mode", "sample.q_mode", choices=["prior", "point_mass"])
    option(parser, "--chunk-size", "sample.chunk_size", type=int)
    option(parser, "--seed", "sample.seed", type=int)
    parser.set_defaults(handler=handle, command_name="sample")


def handle(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    checkpoint = require(cfg.checkpoint, "--checkpoint")
    output = Path(require(cfg.output, "--output"))
    model = load_checkpoint(checkpoint)
    prior = resolve_prior(cfg)
    seed = streams.resolve_seed(cfg.sample.seed)
    threads = resolve_threads(cfg)

    result = sample(model, prior, cfg.sample.model_copy(update={"seed": seed}), threads=threads)
    write_graphs(output, result.graphs)
    write_manifest(
        build_manifest(
            "sample", seed, cfg.model_dump(mode="json"), checkpoint_hash=checkpoint_hash(checkpoint),
            outputs=[str(output)],
        ),
        output,
    )
    logger.info(f"Wrote {len(result.graphs)} samples to {output}")
    return 0
