"""
Eval command: metric report of a sample file against a reference file
"""

import argparse
import logging
from pathlib import Path

from flowgraph.commands.common import add_common_options, load_graphs, option, require, resolve_config, resolve_threads
from flowgraph.core import rng as streams
from flowgraph.core.exceptions import ArtifactIOError
from flowgraph.services.datasets import read_graphs
from flowgraph.services.manifest import build_manifest, manifest_hash, write_manifest
from flowgraph.services.metrics import evaluate

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Compare samples with reference graphs")
    add_common_options(parser)
    option(parser, "--samples", "samples")
    option(parser, "--reference", "reference")
    option(parser, "--training-set", "training_set", help="Training graphs for the novelty metric")
    option(parser, "--output", "output", help="Report path (JSON)")
    parser.set_defaults(handler=handle, command_name="eval")


def handle(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    samples = load_graphs(cfg.samples, "--samples")
    reference = load_graphs(cfg.reference, "--reference")
    training = read_graphs(cfg.training_set) if cfg.training_set else None
    output = Path(require(cfg.output, "--output"))

    metrics_cfg = cfg.metrics
    if metrics_cfg.valence_table is None and cfg.valence_table is not None:
        metrics_cfg = metrics_cfg.model_copy(update={"valence_table": cfg.valence_table})

    manifest = build_manifest(
        "eval", streams.resolve_seed(None), cfg.model_dump(mode="json"), outputs=[str(output)]
    )
    report = evaluate(samples, reference, metrics_cfg, training=training, threads=resolve_threads(cfg))
    report.manifest_hash = manifest_hash(manifest)

    try:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write report {output}: {str(e)}")
        raise ArtifactIOError(f"cannot write report: {e.strerror}", {"path": str(output)})
    write_manifest(manifest, output)
    return 0
