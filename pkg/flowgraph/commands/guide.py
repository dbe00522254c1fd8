"""
Guide command: reward-guided fine-tuning of a trained checkpoint
"""

import argparse
import logging
from pathlib import Path

from flowgraph.commands.common import (
    add_common_options,
    option,
    parse_params,
    require,
    resolve_config,
    resolve_prior,
    resolve_threads,
)
from flowgraph.core import rng as streams
from flowgraph.core.exceptions import ValidationError
from flowgraph.services.checkpoint import checkpoint_hash, load_checkpoint, save_checkpoint
from flowgraph.services.guidance import finetune
from flowgraph.services.manifest import build_manifest, write_manifest
from flowgraph.services.rewards import REWARD_NAMES, reward_builtin

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("guide", help="Fine-tune a checkpoint towards a reward")
    add_common_options(parser)
    option(parser, "--checkpoint", "checkpoint")
    option(parser, "--prior", "prior")
    option(parser, "--data", "data", help="Build the prior from these graphs when --prior is absent")
    option(parser, "--output", "output", help="Fine-tuned checkpoint path")
    option(parser, "--reward", "reward.name", choices=list(REWARD_NAMES))
    parser.add_argument("--reward-param", dest="reward_params", action="append", metavar="KEY=VALUE",
                        help="Reward parameter, repeatable")
    option(parser, "--alpha", "rl.alpha", type=float)
    option(parser, "--beta", "rl.beta", type=float)
    option(parser, "--temperature", "rl.temperature", type=float)
    option(parser, "--literal-temperature", "rl.literal_temperature", action="store_const", const=True)
    option(parser, "--iterations", "rl.n_train", type=int)
    option(parser, "--trajectories", "rl.trajectories", type=int)
    option(parser, "--n-steps", "rl.n_steps", type=int)
    option(parser, "--learning-rate", "rl.learning_rate", type=float)
    option(parser, "--kl-ceiling", "rl.kl_ceiling", type=float)
    option(parser, "--exclude-final-step", "rl.include_final_step", action="store_const", const=False)
    option(parser, "--seed", "rl.seed", type=int)
    parser.set_defaults(handler=handle, command_name="guide")


def handle(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.reward is None:
        raise ValidationError("guide needs a reward: pass --reward or set 'reward' in the config")
    params = {**cfg.reward.params, **parse_params(getattr(args, "reward_params", None))}
    reward = reward_builtin(cfg.reward.name, params, cfg.reward.valence_table or cfg.valence_table)

    checkpoint = require(cfg.checkpoint, "--checkpoint")
    output = Path(require(cfg.output, "--output"))
    model = load_checkpoint(checkpoint)
    prior = resolve_prior(cfg)
    seed = streams.resolve_seed(cfg.rl.seed)
    log_path = output.with_name(output.stem + ".rewards.jsonl")

    logger.info(f"Fine-tuning towards {reward.name} for {cfg.rl.n_train} iterations (seed {seed})")
    finetune(
        model, reward, prior, cfg.rl.model_copy(update={"seed": seed}),
        threads=resolve_threads(cfg), log_path=log_path,
    )
    save_checkpoint(model, output)
    write_manifest(
        build_manifest(
            "guide", seed, cfg.model_dump(mode="json"), checkpoint_hash=checkpoint_hash(checkpoint),
            outputs=[str(output), str(log_path)],
        ),
        output,
    )
    return 0
