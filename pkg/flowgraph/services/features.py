"""
Structural features fed to GraphEvo: cycle counts, connectivity, valency and time
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from flowgraph.core.exceptions import PreconditionError, ValidationError
from flowgraph.models.config import ValenceTable
from flowgraph.services.graphs import Graph

NODE_FEATURES = 4  # k3, k4, k5 participation and largest-component flag
COUNT_FEATURES = 7  # k3..k6 totals, components, valency sum, total weight


@dataclass(frozen=True, eq=False)
class StructuralFeatures:
    node_features: np.ndarray
    global_features: np.ndarray


@dataclass(frozen=True, eq=False)
class CycleCounts:
    """Per-node participation for k = 3, 4, 5 and graph totals for k = 3..6"""

    per_node: np.ndarray
    totals: np.ndarray


def cycle_counts(adjacency: np.ndarray) -> CycleCounts:
    """Simple-cycle counts from closed-walk identities on adjacency powers"""
    a = np.asarray(adjacency, dtype=np.int64)
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    a5 = a4 @ a
    a6 = a5 @ a
    d = a.sum(axis=1)
    d2, d3, d4, d5 = (np.diagonal(m) for m in (a2, a3, a4, a5))

    k3 = d3 // 2
    k4 = (d4 - d * (d - 1) - a @ d) // 2
    degenerate5 = 2 * d * d3 + a @ d3 + 2 * ((a * a2) @ d) - 5 * d3
    k5 = (d5 - degenerate5) // 2

    c6 = (
        np.trace(a6)
        - 3 * np.sum(d3 * d3)
        + 9 * np.sum(a * a2 * a2)
        - 6 * np.sum(d2 * d4)
        + 6 * np.trace(a4)
        - 4 * np.trace(a3)
        + 4 * np.sum(d2 ** 3)
        + 3 * np.sum(a3)
        - 12 * np.sum(d2 ** 2)
        + 4 * np.trace(a2)
    ) // 12

    per_node = np.stack([k3, k4, k5], axis=1)
    totals = np.array([k3.sum() // 3, k4.sum() // 4, k5.sum() // 5, c6], dtype=np.int64)
    return CycleCounts(per_node=per_node, totals=totals)


def component_labels(adjacency: np.ndarray):
    return connected_components(csr_matrix(adjacency), directed=False)


def largest_component_flags(adjacency: np.ndarray) -> np.ndarray:
    """1 for nodes in a component of maximal size; ties flag every maximal component"""
    _, labels = component_labels(adjacency)
    sizes = np.bincount(labels)
    return (sizes[labels] == sizes.max()).astype(np.float64)


def valency(g: Graph, table: Optional[ValenceTable]) -> np.ndarray:
    """Summed bond orders and total node weight; zeros without a table"""
    if table is None:
        return np.zeros(2)
    missing = set(np.unique(g.node_types).tolist()) - set(table.max_valence)
    if missing:
        raise ValidationError("valence table misses node categories", {"missing": sorted(missing)})
    bond_orders = float(np.triu(g.edge_types, k=1).sum())
    weight = float(sum(table.weights.get(kind, 0.0) for kind in g.node_types.tolist()))
    return np.array([2.0 * bond_orders, weight])


def time_embedding(t: float, dim: int = 16) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = 1000.0 * t * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


def structural_features(
    g: Graph, t: float, valence_table: Optional[ValenceTable] = None, time_dim: int = 16
) -> StructuralFeatures:
    if not 0.0 <= t <= 1.0:
        raise PreconditionError("t must lie in [0, 1]", {"t": t})
    adjacency = g.adjacency()
    cycles = cycle_counts(adjacency)
    n_components, _ = component_labels(adjacency)

    node_features = np.concatenate(
        [cycles.per_node.astype(np.float64), largest_component_flags(adjacency)[:, None]], axis=1
    )
    global_features = np.concatenate(
        [
            cycles.totals.astype(np.float64),
            [float(n_components)],
            valency(g, valence_table),
            time_embedding(t, time_dim),
        ]
    )
    return StructuralFeatures(node_features=node_features, global_features=global_features)
