"""
Train command
"""

import argparse
import logging
from pathlib import Path

from flowgraph.commands.common import add_common_options, load_graphs, option, resolve_config
from flowgraph.core import rng as streams
from flowgraph.core.config import settings
from flowgraph.services.checkpoint import checkpoint_hash
from flowgraph.services.manifest import build_manifest, write_manifest
from flowgraph.services.prior import empirical_prior, graphs_fit_prior, load_prior, save_prior
from flowgraph.services.training import train_loop

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train GraphEvo by flow matching")
    add_common_options(parser)
    option(parser, "--data", "data", help="Training graphs (JSON Lines)")
    option(parser, "--prior", "prior", help="Prior file; built from --data when absent")
    option(parser, "--output", "output", help="Run directory for checkpoints, logs and the prior")
    option(parser, "--steps", "train.steps", type=int)
    option(parser, "--batch-size", "train.batch_size", type=int)
    option(parser, "--learning-rate", "train.learning_rate", type=float)
    option(parser, "--edge-loss-weight", "train.edge_loss_weight", type=float)
    option(parser, "--coupling", "train.coupling_mode", choices=["independent", "ot"])
    option(parser, "--q-mode", "train.q_mode", choices=["prior", "point_mass"])
    option(parser, "--checkpoint-interval", "train.checkpoint_interval", type=int)
    option(parser, "--seed", "train.seed", type=int)
    option(parser, "--layers", "model.n_layers", type=int)
    option(parser, "--float64", "model.float64", action="store_const", const=True)
    parser.set_defaults(handler=handle, command_name="train")


def handle(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    graphs = load_graphs(cfg.data, "--data")
    prior = load_prior(cfg.prior) if cfg.prior else empirical_prior(graphs)
    graphs_fit_prior(graphs, prior)
    seed = streams.resolve_seed(cfg.train.seed)

    run_dir = Path(cfg.output or Path(settings.OUTPUT_DIR) / "train")
    checkpoint_dir = run_dir / "checkpoints"
    prior_path = run_dir / "prior.json"
    log_path = run_dir / "train_log.jsonl"
    save_prior(prior, prior_path)

    logger.info(f"Training on {len(graphs)} graphs for {cfg.train.steps} steps (seed {seed})")
    train_loop(
        graphs,
        cfg.train,
        model_cfg=cfg.model,
        prior=prior,
        seed=seed,
        checkpoint_dir=checkpoint_dir,
        log_path=log_path,
        valence_table=cfg.valence_table,
    )
    final = checkpoint_dir / "final.json"
    write_manifest(
        build_manifest(
            "train",
            seed,
            cfg.model_dump(mode="json"),
            checkpoint_hash=checkpoint_hash(final),
            outputs=[str(final), str(prior_path), str(log_path)],
        ),
        run_dir,
    )
    return 0
