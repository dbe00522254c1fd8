"""Hypothesis strategies shared by the test modules"""

import numpy as np
from hypothesis import strategies as st

from flowgraph.services.graphs import Graph, graph_from_key


@st.composite
def graphs(draw, min_nodes: int = 1, max_nodes: int = 6, node_types: int = 3, edge_types: int = 3) -> Graph:
    n = draw(st.integers(min_nodes, max_nodes))
    nodes = draw(st.lists(st.integers(0, node_types - 1), min_size=n, max_size=n))
    pairs = n * (n - 1) // 2
    upper = draw(st.lists(st.integers(0, edge_types - 1), min_size=pairs, max_size=pairs))
    return graph_from_key((tuple(nodes), tuple(upper)))


@st.composite
def simple_graphs(draw, min_nodes: int = 1, max_nodes: int = 7) -> Graph:
    """Unlabeled graphs: one node category, edges present or absent"""
    return draw(graphs(min_nodes, max_nodes, node_types=1, edge_types=2))


@st.composite
def probability_vectors(draw, min_size: int = 2, max_size: int = 5) -> np.ndarray:
    size = draw(st.integers(min_size, max_size))
    weights = draw(st.lists(st.floats(0.0, 1.0), min_size=size, max_size=size))
    weights = np.asarray(weights) + 1e-3
    return weights / weights.sum()


def permutations(size: int):
    return st.permutations(list(range(size)))
