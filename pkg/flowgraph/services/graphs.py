"""
Labeled graph representation and permutation machinery
"""

import itertools
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from flowgraph.core.exceptions import (
    CapacityError,
    GraphValidationError,
    PermutationError,
    PreconditionError,
)

NO_EDGE = 0


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.int64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Graph:
    """Variable-size graph with categorical node types and symmetric edge types.

    Edge category 0 means "no edge"; the diagonal is always 0.
    """

    node_types: np.ndarray
    edge_types: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.node_types).reshape(-1)
        edges = _frozen(self.edge_types)
        n = nodes.shape[0]
        if n < 1:
            raise GraphValidationError("graph must have at least one node")
        if edges.shape != (n, n):
            raise GraphValidationError(
                "edge matrix shape does not match node count",
                {"n_nodes": n, "shape": tuple(edges.shape)},
            )
        if (nodes < 0).any() or (edges < 0).any():
            raise GraphValidationError("categories must be non-negative")
        if not np.array_equal(edges, edges.T):
            raise GraphValidationError("edge matrix is not symmetric")
        if np.diagonal(edges).any():
            raise GraphValidationError("diagonal must be the no-edge category")
        object.__setattr__(self, "node_types", nodes)
        object.__setattr__(self, "edge_types", edges)

    @property
    def n_nodes(self) -> int:
        return int(self.node_types.shape[0])

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.edge_types, k=1)))

    def adjacency(self) -> np.ndarray:
        """Binarized adjacency: any category >= 1 is an edge"""
        return (self.edge_types != NO_EDGE).astype(np.int64)

    def validate_categories(self, n_node_types: int, n_edge_types: int) -> "Graph":
        if self.node_types.max(initial=0) >= n_node_types:
            raise GraphValidationError(
                "node category out of range", {"max": int(self.node_types.max()), "n": n_node_types}
            )
        if self.edge_types.max(initial=0) >= n_edge_types:
            raise GraphValidationError(
                "edge category out of range", {"max": int(self.edge_types.max()), "m": n_edge_types}
            )
        return self

    def upper_edges(self) -> Iterator[Tuple[int, int, int]]:
        rows, cols = np.nonzero(np.triu(self.edge_types, k=1))
        for i, j in zip(rows.tolist(), cols.tolist()):
            yield i, j, int(self.edge_types[i, j])

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for i, kind in enumerate(self.node_types.tolist()):
            g.add_node(i, kind=kind)
        for i, j, kind in self.upper_edges():
            g.add_edge(i, j, kind=kind)
        return g

    @classmethod
    def from_networkx(cls, g: nx.Graph, node_attr: str = "kind", edge_attr: str = "kind") -> "Graph":
        order = {node: idx for idx, node in enumerate(g.nodes())}
        n = len(order)
        nodes = np.zeros(n, dtype=np.int64)
        edges = np.zeros((n, n), dtype=np.int64)
        for node, data in g.nodes(data=True):
            nodes[order[node]] = data.get(node_attr, 0)
        for u, v, data in g.edges(data=True):
            if u == v:
                continue
            i, j = order[u], order[v]
            edges[i, j] = edges[j, i] = data.get(edge_attr, 1)
        return cls(nodes, edges)

    @classmethod
    def empty(cls, n_nodes: int) -> "Graph":
        return cls(np.zeros(n_nodes, dtype=np.int64), np.zeros((n_nodes, n_nodes), dtype=np.int64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.node_types, other.node_types) and np.array_equal(
            self.edge_types, other.edge_types
        )

    def __hash__(self) -> int:
        return hash(graph_key(self))

    def __repr__(self) -> str:
        return f"Graph(n_nodes={self.n_nodes}, nodes={self.node_types.tolist()}, edges={list(self.upper_edges())})"


@dataclass(frozen=True)
class Permutation:
    """Bijection on {0..size-1}; node i moves to position mapping[i]"""

    mapping: Tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(v) for v in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise PermutationError("mapping is not a bijection", {"mapping": mapping})
        object.__setattr__(self, "mapping", mapping)

    @property
    def size(self) -> int:
        return len(self.mapping)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.int64)

    def __call__(self, i: int) -> int:
        return self.mapping[i]


def identity(size: int) -> Permutation:
    return Permutation(tuple(range(size)))


def inverse(p: Permutation) -> Permutation:
    inv = np.empty(p.size, dtype=np.int64)
    inv[p.as_array()] = np.arange(p.size)
    return Permutation(tuple(inv.tolist()))


def random_permutation(size: int, rng: np.random.Generator) -> Permutation:
    return Permutation(tuple(rng.permutation(size).tolist()))


def permute(g: Graph, p: Permutation) -> Graph:
    """Relabel nodes: node_types'[p(i)] = node_types[i], edge_types'[p(i)][p(j)] = edge_types[i][j]"""
    if p.size != g.n_nodes:
        raise PreconditionError(
            "permutation size does not match graph", {"permutation": p.size, "n_nodes": g.n_nodes}
        )
    m = p.as_array()
    nodes = np.empty_like(g.node_types)
    nodes[m] = g.node_types
    edges = np.empty_like(g.edge_types)
    edges[np.ix_(m, m)] = g.edge_types
    return Graph(nodes, edges)


def permute_array(array: np.ndarray, p: Permutation, node_axes: Sequence[int]) -> np.ndarray:
    """Apply a node permutation to the given axes of an arbitrary array"""
    out = np.asarray(array)
    m = p.as_array()
    for axis in node_axes:
        moved = np.empty_like(out)
        index = [slice(None)] * out.ndim
        index[axis] = m
        moved[tuple(index)] = out
        out = moved
    return out


GraphKey = Tuple[Tuple[int, ...], Tuple[int, ...]]


def graph_key(g: Graph) -> GraphKey:
    """Hashable labeled encoding: node types plus the strict upper triangle"""
    iu = np.triu_indices(g.n_nodes, k=1)
    return tuple(g.node_types.tolist()), tuple(g.edge_types[iu].tolist())


def graph_from_key(key: GraphKey) -> Graph:
    nodes, upper = key
    n = len(nodes)
    edges = np.zeros((n, n), dtype=np.int64)
    iu = np.triu_indices(n, k=1)
    edges[iu] = upper
    return Graph(np.asarray(nodes), edges + edges.T)


def enumerate_graph_space(
    n_nodes: int, n_node_types: int, n_edge_types: int, limit: Optional[int] = 100_000
) -> Iterator[Graph]:
    """Every labeled graph with the given size and category counts"""
    n_pairs = n_nodes * (n_nodes - 1) // 2
    total = n_node_types ** n_nodes * n_edge_types ** n_pairs
    if limit is not None and total > limit:
        raise CapacityError("graph space too large to enumerate", {"size": total, "limit": limit})
    for nodes in itertools.product(range(n_node_types), repeat=n_nodes):
        for upper in itertools.product(range(n_edge_types), repeat=n_pairs):
            yield graph_from_key((tuple(nodes), tuple(upper)))
