"""
Dataset commands: synthetic generators and prior files
"""

import argparse
import logging
from pathlib import Path

from flowgraph.commands.common import add_common_options, option, require, resolve_config
from flowgraph.core import rng as streams
from flowgraph.services.datasets import gen_community_small, gen_grid, read_graphs, split_dataset, write_graphs
from flowgraph.services.manifest import build_manifest, write_manifest
from flowgraph.services.prior import empirical_prior, save_prior

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("dataset", help="Generate datasets and prior files")
    actions = parser.add_subparsers(dest="action", required=True)

    gen = actions.add_parser("gen", help="Generate a synthetic dataset as JSON Lines")
    add_common_options(gen)
    option(gen, "--kind", "dataset.kind", choices=["community-small", "grid"])
    option(gen, "--count", "dataset.count", type=int)
    option(gen, "--seed", "dataset.seed", type=int)
    option(gen, "--min-side", "dataset.min_side", type=int)
    option(gen, "--max-side", "dataset.max_side", type=int)
    option(gen, "--p-intra", "dataset.p_intra", type=float, help="Within-community edge probability")
    option(gen, "--test-fraction", "dataset.test_fraction", type=float,
           help="Also write <output>.train.jsonl and <output>.test.jsonl")
    option(gen, "--output", "output", required=False)
    gen.set_defaults(handler=generate, command_name="dataset gen")

    prior = actions.add_parser("prior", help="Write the empirical prior of a dataset")
    add_common_options(prior)
    option(prior, "--data", "data")
    option(prior, "--output", "output")
    prior.set_defaults(handler=build_prior, command_name="dataset prior")


def generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    output = Path(require(cfg.output, "--output"))
    spec = cfg.dataset
    seed = streams.resolve_seed(spec.seed)

    if spec.kind == "grid":
        graphs = gen_grid(spec.count, spec.min_side, spec.max_side, seed)
    else:
        graphs = gen_community_small(spec.count, seed, p_intra=spec.p_intra)
    outputs = [str(output)]
    write_graphs(output, graphs)

    if spec.test_fraction:
        train, test = split_dataset(graphs, spec.test_fraction, seed)
        for name, part in (("train", train), ("test", test)):
            path = output.with_name(f"{output.stem}.{name}.jsonl")
            write_graphs(path, part)
            outputs.append(str(path))

    write_manifest(build_manifest("dataset gen", seed, cfg.model_dump(mode="json"), outputs=outputs), output)
    logger.info(f"Wrote {len(graphs)} {spec.kind} graphs to {output}")
    return 0


def build_prior(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    graphs = read_graphs(require(cfg.data, "--data"))
    output = Path(require(cfg.output, "--output"))
    prior = empirical_prior(graphs)
    save_prior(prior, output)
    logger.info(
        f"Prior of {len(graphs)} graphs: {prior.n_node_types} node types, {prior.n_edge_types} edge types, "
        f"sizes up to {prior.max_nodes}"
    )
    return 0
