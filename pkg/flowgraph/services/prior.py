"""
Product-of-categoricals prior: construction, sampling and persistence
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from flowgraph.core.config import settings
from flowgraph.core.exceptions import ArtifactIOError, PreconditionError, ValidationError
from flowgraph.models.graph import PriorFile
from flowgraph.services.graphs import Graph, enumerate_graph_space, graph_key

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9


def _probability_vector(values, name: str) -> np.ndarray:
    vector = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    if (vector < 0).any() or not np.isfinite(vector).all():
        raise ValidationError(f"{name} has negative or non-finite entries")
    if abs(vector.sum() - 1.0) > TOLERANCE:
        raise ValidationError(f"{name} does not sum to 1", {"sum": float(vector.sum())})
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Prior:
    """Node marginal, edge marginal (category 0 = no edge) and node-count law"""

    node_marginal: np.ndarray
    edge_marginal: np.ndarray
    size_distribution: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "node_marginal", _probability_vector(self.node_marginal, "node_marginal"))
        object.__setattr__(self, "edge_marginal", _probability_vector(self.edge_marginal, "edge_marginal"))
        object.__setattr__(
            self, "size_distribution", _probability_vector(self.size_distribution, "size_distribution")
        )

    @property
    def n_node_types(self) -> int:
        return int(self.node_marginal.shape[0])

    @property
    def n_edge_types(self) -> int:
        return int(self.edge_marginal.shape[0])

    @property
    def max_nodes(self) -> int:
        return int(np.flatnonzero(self.size_distribution).max())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Prior):
            return NotImplemented
        return (
            np.array_equal(self.node_marginal, other.node_marginal)
            and np.array_equal(self.edge_marginal, other.edge_marginal)
            and np.array_equal(self.size_distribution, other.size_distribution)
        )


def empirical_prior(dataset: Sequence[Graph], n_node_types: Optional[int] = None, n_edge_types: Optional[int] = None) -> Prior:
    """Frequencies of node categories, unordered-pair edge categories and node counts"""
    if not dataset:
        raise PreconditionError("dataset must be non-empty")

    n_node_types = n_node_types or int(max(g.node_types.max() for g in dataset)) + 1
    n_edge_types = n_edge_types or max(2, int(max(g.edge_types.max() for g in dataset)) + 1)
    max_nodes = max(g.n_nodes for g in dataset)

    node_counts = np.zeros(n_node_types, dtype=np.int64)
    edge_counts = np.zeros(n_edge_types, dtype=np.int64)
    size_counts = np.zeros(max_nodes + 1, dtype=np.int64)
    for g in dataset:
        g.validate_categories(n_node_types, n_edge_types)
        node_counts += np.bincount(g.node_types, minlength=n_node_types)
        upper = g.edge_types[np.triu_indices(g.n_nodes, k=1)]
        edge_counts += np.bincount(upper, minlength=n_edge_types)
        size_counts[g.n_nodes] += 1

    if edge_counts.sum() == 0:
        # single-node graphs only: no pairs observed, keep the no-edge category certain
        edge_counts[0] = 1
    return Prior(
        node_marginal=node_counts / node_counts.sum(),
        edge_marginal=edge_counts / edge_counts.sum(),
        size_distribution=size_counts / size_counts.sum(),
    )


def uniform_prior(n_node_types: int, n_edge_types: int, sizes: Sequence[int]) -> Prior:
    size_distribution = np.zeros(max(sizes) + 1)
    size_distribution[list(sizes)] = 1.0 / len(sizes)
    return Prior(
        node_marginal=np.full(n_node_types, 1.0 / n_node_types),
        edge_marginal=np.full(n_edge_types, 1.0 / n_edge_types),
        size_distribution=size_distribution,
    )


def sample_size(prior: Prior, rng: np.random.Generator) -> int:
    return int(rng.choice(prior.size_distribution.shape[0], p=prior.size_distribution))


def sample_prior_graph(prior: Prior, n_nodes: int, rng: np.random.Generator) -> Graph:
    """G0 ~ product prior with a fixed node count"""
    if n_nodes > settings.N_MAX:
        raise PreconditionError("node count exceeds N_MAX", {"n_nodes": n_nodes, "N_MAX": settings.N_MAX})
    nodes = rng.choice(prior.n_node_types, size=n_nodes, p=prior.node_marginal)
    iu = np.triu_indices(n_nodes, k=1)
    upper = rng.choice(prior.n_edge_types, size=iu[0].shape[0], p=prior.edge_marginal)
    edges = np.zeros((n_nodes, n_nodes), dtype=np.int64)
    edges[iu] = upper
    return Graph(nodes, edges + edges.T)


def product_probability(g: Graph, node_marginal: np.ndarray, edge_marginal: np.ndarray) -> float:
    upper = g.edge_types[np.triu_indices(g.n_nodes, k=1)]
    return float(np.prod(node_marginal[g.node_types]) * np.prod(edge_marginal[upper]))


def projection_distances(
    dataset: Sequence[Graph],
    n_node_types: int,
    n_edge_types: int,
    n_random: int,
    rng: np.random.Generator,
    metric: str = "kl",
) -> Tuple[float, np.ndarray]:
    """Distance from the enumerated empirical joint to the empirical product
    prior, and to ``n_random`` random product distributions.

    ``metric`` is "kl" for KL(joint || product), under which the empirical
    prior is the exact minimizer over tied products, or "euclidean".
    """
    if metric not in ("kl", "euclidean"):
        raise ValidationError("unknown projection metric", {"metric": metric})
    sizes = {g.n_nodes for g in dataset}
    if len(sizes) != 1:
        raise PreconditionError("projection check needs a single node count", {"sizes": sorted(sizes)})
    n_nodes = sizes.pop()

    space = list(enumerate_graph_space(n_nodes, n_node_types, n_edge_types))
    index = {graph_key(g): k for k, g in enumerate(space)}
    joint = np.zeros(len(space))
    for g in dataset:
        joint[index[graph_key(g)]] += 1.0 / len(dataset)

    prior = empirical_prior(dataset, n_node_types, n_edge_types)

    def distance(node_marginal: np.ndarray, edge_marginal: np.ndarray) -> float:
        product = np.array([product_probability(g, node_marginal, edge_marginal) for g in space])
        if metric == "euclidean":
            return float(np.linalg.norm(joint - product))
        support = joint > 0
        with np.errstate(divide="ignore"):
            return float(np.sum(joint[support] * (np.log(joint[support]) - np.log(product[support]))))

    own = distance(prior.node_marginal, prior.edge_marginal)
    random = np.array(
        [
            distance(rng.dirichlet(np.ones(n_node_types)), rng.dirichlet(np.ones(n_edge_types)))
            for _ in range(n_random)
        ]
    )
    return own, random


def save_prior(prior: Prior, path) -> None:
    path = Path(path)
    payload = PriorFile(
        format_version=settings.FORMAT_VERSION,
        node_marginal=prior.node_marginal.tolist(),
        edge_marginal=prior.edge_marginal.tolist(),
        size_distribution=prior.size_distribution.tolist(),
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(payload.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write prior: {e.strerror}", {"path": str(path)})


def load_prior(path) -> Prior:
    path = Path(path)
    try:
        payload = PriorFile.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except OSError as e:
        raise ArtifactIOError(f"cannot read prior: {e.strerror}", {"path": str(path)})
    except (json.JSONDecodeError, PydanticValidationError) as e:
        raise ValidationError(f"malformed prior file: {str(e)}", {"path": str(path)})
    return Prior(payload.node_marginal, payload.edge_marginal, payload.size_distribution)


def graphs_fit_prior(graphs: List[Graph], prior: Prior) -> None:
    for g in graphs:
        g.validate_categories(prior.n_node_types, prior.n_edge_types)
