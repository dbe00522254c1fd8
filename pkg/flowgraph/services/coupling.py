"""
Minibatch optimal-transport coupling under Hamming cost
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from flowgraph.core.exceptions import PreconditionError, ValidationError
from flowgraph.models.config import CouplingMode
from flowgraph.services.graphs import Graph, Permutation, identity
from flowgraph.services.prior import Prior, sample_prior_graph

logger = logging.getLogger(__name__)

SIZE_MISMATCH_PENALTY = 1e9


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """entries[i][j]: cost of pairing noise graph i with data graph j"""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64, copy=True)
        if entries.ndim != 2:
            raise ValidationError("cost matrix must be two-dimensional", {"shape": entries.shape})
        if not np.isfinite(entries).all() or (entries < 0).any():
            raise ValidationError("cost entries must be finite and non-negative")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def is_square(self) -> bool:
        return self.entries.shape[0] == self.entries.shape[1]


@dataclass(frozen=True)
class CouplingPlan:
    """Noise sample i is paired with data sample assignment(i)"""

    assignment: Permutation
    total_cost: float
    mode: CouplingMode


def hamming(g0: Graph, g1: Graph, lam: float = 1.0) -> float:
    """Node-label mismatches plus lam times mismatched unordered pairs"""
    if g0.n_nodes != g1.n_nodes:
        raise PreconditionError("hamming needs equal node counts", {"g0": g0.n_nodes, "g1": g1.n_nodes})
    iu = np.triu_indices(g0.n_nodes, k=1)
    nodes = np.count_nonzero(g0.node_types != g1.node_types)
    edges = np.count_nonzero(g0.edge_types[iu] != g1.edge_types[iu])
    return float(nodes) + lam * float(edges)


def batch_cost_matrix(noise: Sequence[Graph], data: Sequence[Graph], lam: float = 1.0) -> CostMatrix:
    if not noise or not data:
        raise PreconditionError("cost matrix needs non-empty batches")
    if len(noise) != len(data):
        raise PreconditionError("batch sizes differ", {"noise": len(noise), "data": len(data)})

    entries = np.full((len(noise), len(data)), SIZE_MISMATCH_PENALTY)
    sizes = sorted({g.n_nodes for g in noise} & {g.n_nodes for g in data})
    for n in sizes:
        rows = [i for i, g in enumerate(noise) if g.n_nodes == n]
        cols = [j for j, g in enumerate(data) if g.n_nodes == n]
        iu = np.triu_indices(n, k=1)
        nodes0 = np.stack([noise[i].node_types for i in rows])
        nodes1 = np.stack([data[j].node_types for j in cols])
        upper0 = np.stack([noise[i].edge_types[iu] for i in rows])
        upper1 = np.stack([data[j].edge_types[iu] for j in cols])
        node_cost = (nodes0[:, None, :] != nodes1[None, :, :]).sum(axis=-1).astype(np.float64)
        edge_cost = (upper0[:, None, :] != upper1[None, :, :]).sum(axis=-1).astype(np.float64)
        entries[np.ix_(rows, cols)] = node_cost + lam * edge_cost
    return CostMatrix(entries)


def solve_assignment(c: CostMatrix) -> CouplingPlan:
    """Exact minimum-cost perfect assignment"""
    if not c.is_square:
        raise PreconditionError("assignment needs a square cost matrix", {"shape": c.entries.shape})
    rows, cols = linear_sum_assignment(c.entries)
    total = float(c.entries[rows, cols].sum())
    return CouplingPlan(assignment=Permutation(tuple(cols.tolist())), total_cost=total, mode=CouplingMode.OT)


def plan_coupling(
    noise: Sequence[Graph], data: Sequence[Graph], lam: float, mode: CouplingMode
) -> CouplingPlan:
    costs = batch_cost_matrix(noise, data, lam)
    if mode == CouplingMode.OT:
        return solve_assignment(costs)
    total = float(np.trace(costs.entries))
    return CouplingPlan(assignment=identity(len(noise)), total_cost=total, mode=CouplingMode.INDEPENDENT)


def couple(
    noise: Sequence[Graph], data: Sequence[Graph], lam: float = 1.0, mode: CouplingMode = CouplingMode.OT
) -> List[Tuple[Graph, Graph]]:
    """(noise, data) pairs: index-aligned, or reordered by the optimal assignment"""
    plan = plan_coupling(noise, data, lam, mode)
    return [(noise[i], data[plan.assignment(i)]) for i in range(len(noise))]


def noise_batch(data: Sequence[Graph], prior: Prior, rng: np.random.Generator) -> List[Graph]:
    """One prior draw per data graph, with the same node count"""
    return [sample_prior_graph(prior, g.n_nodes, rng) for g in data]
