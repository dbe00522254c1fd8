"""
Built-in terminal rewards, each bounded to [0, 1]
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from flowgraph.core.exceptions import ValidationError
from flowgraph.models.config import RewardSpec, ValenceTable
from flowgraph.services.features import cycle_counts
from flowgraph.services.graphs import Graph


@dataclass(frozen=True)
class RewardFn:
    name: str
    fn: Callable[[Graph], float]
    params: Dict[str, float] = field(default_factory=dict)

    def __call__(self, g: Graph) -> float:
        return float(self.fn(g))


def bond_order_sums(g: Graph) -> np.ndarray:
    """Per-node sum of incident edge categories read as bond orders"""
    return g.edge_types.sum(axis=1)


def check_valence_table(g: Graph, table: ValenceTable) -> None:
    missing = set(np.unique(g.node_types).tolist()) - set(table.max_valence)
    if missing:
        raise ValidationError("valence table misses node categories", {"missing": sorted(missing)})


def edge_count_target(target: float, sigma: float = 1.0) -> Callable[[Graph], float]:
    if sigma <= 0:
        raise ValidationError("sigma must be positive", {"sigma": sigma})

    def reward(g: Graph) -> float:
        return math.exp(-((g.n_edges - target) ** 2) / (2 * sigma ** 2))

    return reward


def triangle_density(g: Graph) -> float:
    """Triangles over C(n, 3)"""
    if g.n_nodes < 3:
        return 0.0
    triangles = int(cycle_counts(g.adjacency()).totals[0])
    return triangles / math.comb(g.n_nodes, 3)


def valence_validity(table: ValenceTable) -> Callable[[Graph], float]:
    def reward(g: Graph) -> float:
        check_valence_table(g, table)
        limits = np.array([table.max_valence[kind] for kind in g.node_types.tolist()])
        return float(np.mean(bond_order_sums(g) <= limits))

    return reward


REWARD_NAMES = ("edge_count_target", "triangle_density", "valence_validity")


def reward_builtin(name: str, params: Optional[Dict[str, float]] = None, valence_table: Optional[ValenceTable] = None) -> RewardFn:
    params = dict(params or {})
    if name == "edge_count_target":
        if "target" not in params:
            raise ValidationError("edge_count_target needs a 'target' parameter")
        fn = edge_count_target(params["target"], params.get("sigma", 1.0))
    elif name == "triangle_density":
        fn = triangle_density
    elif name == "valence_validity":
        if valence_table is None:
            raise ValidationError("valence_validity needs a valence table")
        fn = valence_validity(valence_table)
    else:
        raise ValidationError(f"unknown reward: {name}", {"known": ", ".join(REWARD_NAMES)})
    return RewardFn(name=name, fn=fn, params=params)


def reward_from_spec(spec: RewardSpec) -> RewardFn:
    return reward_builtin(spec.name, spec.params, spec.valence_table)
