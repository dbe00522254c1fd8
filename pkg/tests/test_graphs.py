import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgraph.core.exceptions import CapacityError, GraphValidationError, PermutationError, PreconditionError
from flowgraph.services.graphs import (
    Graph,
    Permutation,
    enumerate_graph_space,
    graph_from_key,
    graph_key,
    identity,
    inverse,
    permute,
    permute_array,
    random_permutation,
)
from tests.strategies import graphs


class TestGraph:
    def test_rejects_asymmetric_edges(self):
        edges = np.array([[0, 1], [0, 0]])
        with pytest.raises(GraphValidationError, match="symmetric"):
            Graph(np.zeros(2), edges)

    def test_rejects_self_loops(self):
        with pytest.raises(GraphValidationError, match="diagonal"):
            Graph(np.zeros(2), np.array([[1, 0], [0, 0]]))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(GraphValidationError, match="shape"):
            Graph(np.zeros(3), np.zeros((2, 2)))

    def test_rejects_negative_categories(self):
        with pytest.raises(GraphValidationError):
            Graph(np.array([0, -1]), np.zeros((2, 2)))

    def test_rejects_empty_graph(self):
        with pytest.raises(GraphValidationError):
            Graph(np.zeros(0), np.zeros((0, 0)))

    def test_is_immutable(self):
        g = Graph.empty(3)
        with pytest.raises(ValueError):
            g.node_types[0] = 1

    def test_counts_and_adjacency(self):
        g = graph_from_key(((0, 1, 2), (2, 0, 1)))
        assert g.n_nodes == 3
        assert g.n_edges == 2
        np.testing.assert_array_equal(g.adjacency(), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        assert list(g.upper_edges()) == [(0, 1, 2), (1, 2, 1)]

    def test_validate_categories(self):
        g = graph_from_key(((0, 2), (1,)))
        assert g.validate_categories(3, 2) is g
        with pytest.raises(GraphValidationError, match="node category"):
            g.validate_categories(2, 2)
        with pytest.raises(GraphValidationError, match="edge category"):
            g.validate_categories(3, 1)

    def test_networkx_round_trip(self):
        g = graph_from_key(((0, 1, 1, 2), (1, 0, 2, 0, 0, 1)))
        assert Graph.from_networkx(g.to_networkx()) == g

    def test_from_networkx_defaults(self):
        g = Graph.from_networkx(nx.path_graph(3))
        assert g.node_types.tolist() == [0, 0, 0]
        assert g.n_edges == 2

    def test_equality_and_hash(self):
        a = graph_from_key(((0, 1), (1,)))
        b = graph_from_key(((0, 1), (1,)))
        assert a == b
        assert hash(a) == hash(b)
        assert len({a, b}) == 1
        assert a != graph_from_key(((1, 0), (1,)))


class TestPermutation:
    def test_rejects_non_bijection(self):
        with pytest.raises(PermutationError):
            Permutation((0, 0, 1))

    def test_identity_and_inverse(self):
        p = Permutation((2, 0, 1))
        assert inverse(p).mapping == (1, 2, 0)
        assert identity(3).mapping == (0, 1, 2)

    def test_permute_moves_node_i_to_p_of_i(self):
        g = graph_from_key(((0, 1, 2), (1, 0, 0)))
        p = Permutation((2, 0, 1))
        moved = permute(g, p)
        assert moved.node_types.tolist() == [1, 2, 0]
        assert moved.edge_types[p(0), p(1)] == 1
        assert moved.n_edges == 1

    def test_permute_size_mismatch(self):
        with pytest.raises(PreconditionError):
            permute(Graph.empty(3), identity(2))

    @settings(max_examples=50, deadline=None)
    @given(graphs(), st.integers(0, 2**32 - 1))
    def test_inverse_undoes_permute(self, g, seed):
        p = random_permutation(g.n_nodes, np.random.default_rng(seed))
        assert permute(permute(g, p), inverse(p)) == g

    @settings(max_examples=50, deadline=None)
    @given(graphs(), st.integers(0, 2**32 - 1))
    def test_permute_array_matches_permute(self, g, seed):
        p = random_permutation(g.n_nodes, np.random.default_rng(seed))
        moved = permute(g, p)
        np.testing.assert_array_equal(permute_array(g.node_types, p, [0]), moved.node_types)
        np.testing.assert_array_equal(permute_array(g.edge_types, p, [0, 1]), moved.edge_types)


class TestGraphSpace:
    @settings(max_examples=50, deadline=None)
    @given(graphs())
    def test_key_round_trip(self, g):
        assert graph_from_key(graph_key(g)) == g

    def test_enumeration_is_complete_and_distinct(self):
        space = list(enumerate_graph_space(2, 2, 3))
        assert len(space) == 2 ** 2 * 3
        assert len({graph_key(g) for g in space}) == len(space)

    def test_enumeration_limit(self):
        with pytest.raises(CapacityError):
            list(enumerate_graph_space(4, 3, 3, limit=1000))
