"""
Subcommands; each module registers its own parser
"""

from flowgraph.commands import check, dataset, evaluate, guide, sample, train

COMMANDS = (dataset, train, sample, guide, evaluate, check)
