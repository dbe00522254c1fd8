import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from networkx.algorithms.isomorphism import GraphMatcher

from flowgraph.core.exceptions import CapacityError, PreconditionError, ValidationError
from flowgraph.models.config import KernelKind, MetricsConfig, MmdKernel, ValenceTable
from flowgraph.services.graphs import Graph, Permutation, graph_from_key, graph_key, permute, random_permutation
from flowgraph.services.metrics import (
    ORBITS,
    connected_subsets,
    degree_mmd,
    evaluate,
    graph_stats,
    kernel_value,
    mmd2,
    novelty,
    orbit_counts,
    tv_distance_enumerated,
    uniqueness,
    validity_no_correction,
    validity_rate,
)
from tests.strategies import graphs, permutations, simple_graphs

# (template edges, orbit of each template node)
GRAPHLETS = [
    ([(0, 1), (1, 2), (2, 3)], [4, 5, 5, 4]),
    ([(0, 1), (0, 2), (0, 3)], [7, 6, 6, 6]),
    ([(0, 1), (1, 2), (2, 3), (3, 0)], [8, 8, 8, 8]),
    ([(0, 1), (1, 2), (2, 0), (2, 3)], [10, 10, 11, 9]),
    ([(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], [12, 12, 13, 13]),
    ([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], [14, 14, 14, 14]),
]


def orbits_by_matching(adjacency: np.ndarray) -> np.ndarray:
    """Orbit counts by testing every 4-subset against the graphlet templates"""
    g = nx.from_numpy_array(adjacency)
    counts = np.zeros((adjacency.shape[0], len(ORBITS)), dtype=np.int64)
    templates = [(nx.Graph(edges), orbits) for edges, orbits in GRAPHLETS]
    for quad in itertools.combinations(range(adjacency.shape[0]), 4):
        sub = g.subgraph(quad)
        if not nx.is_connected(sub):
            continue
        for template, orbits in templates:
            matcher = GraphMatcher(sub, template)
            if matcher.is_isomorphic():
                for node, target in matcher.mapping.items():
                    counts[node, orbits[target] - ORBITS[0]] += 1
                break
    return counts


def adjacency_of(g: nx.Graph) -> np.ndarray:
    return nx.to_numpy_array(g, dtype=np.int64)


class TestOrbits:
    def test_star(self, star5):
        counts = orbit_counts(star5.adjacency())
        assert counts[0].tolist() == [0, 0, 0, 4, 0, 0, 0, 0, 0, 0, 0]
        for leaf in range(1, 5):
            assert counts[leaf].tolist() == [0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 0]

    def test_small_graphlets(self):
        assert orbit_counts(adjacency_of(nx.complete_graph(4)))[:, 10].tolist() == [1, 1, 1, 1]
        assert orbit_counts(adjacency_of(nx.cycle_graph(4)))[:, 4].tolist() == [1, 1, 1, 1]
        path = orbit_counts(adjacency_of(nx.path_graph(4)))
        assert path[:, 0].tolist() == [1, 0, 0, 1]
        assert path[:, 1].tolist() == [0, 1, 1, 0]
        assert path.sum() == 4

    def test_fewer_than_four_nodes(self):
        assert orbit_counts(adjacency_of(nx.complete_graph(3))).sum() == 0

    @settings(max_examples=60, deadline=None)
    @given(simple_graphs(max_nodes=7))
    def test_matches_template_matching(self, g):
        adjacency = g.adjacency()
        np.testing.assert_array_equal(orbit_counts(adjacency), orbits_by_matching(adjacency))


@settings(max_examples=60, deadline=None)
@given(simple_graphs(max_nodes=7))
def test_connected_subsets_are_complete_and_distinct(g):
    nxg = nx.from_numpy_array(g.adjacency())
    neighbors = [set(nxg.neighbors(v)) for v in range(g.n_nodes)]
    for size in (1, 2, 3, 4):
        found = [tuple(sorted(s)) for s in connected_subsets(neighbors, size)]
        expected = [
            s for s in itertools.combinations(range(g.n_nodes), size) if nx.is_connected(nxg.subgraph(s))
        ]
        assert len(found) == len(set(found))
        assert sorted(found) == expected


class TestGraphStats:
    def test_triangle(self):
        stats = graph_stats(Graph.from_networkx(nx.complete_graph(3)), 10)
        assert stats.degree_histogram.tolist() == [0.0, 0.0, 1.0]
        assert stats.clustering_histogram[-1] == 1.0
        assert stats.clustering_histogram[:-1].sum() == 0.0

    def test_histograms_are_normalized(self, star5):
        stats = graph_stats(star5)
        assert stats.degree_histogram.sum() == pytest.approx(1.0)
        assert stats.clustering_histogram.sum() == pytest.approx(1.0)
        assert stats.orbit_counts.tolist()[2:4] == [12 / 5, 4 / 5]

    @settings(max_examples=40, deadline=None)
    @given(graphs(1, 7, node_types=2, edge_types=3).flatmap(lambda g: st.tuples(st.just(g), permutations(g.n_nodes))))
    def test_relabeling_leaves_stats_unchanged(self, case):
        g, mapping = case
        a = graph_stats(g)
        b = graph_stats(permute(g, Permutation(tuple(mapping))))
        np.testing.assert_allclose(b.degree_histogram, a.degree_histogram)
        np.testing.assert_allclose(b.clustering_histogram, a.clustering_histogram)
        np.testing.assert_allclose(b.orbit_counts, a.orbit_counts)


class TestKernels:
    def test_gaussian_emd(self):
        k = MmdKernel(kind=KernelKind.GAUSSIAN_EMD, sigma=1.0)
        assert kernel_value(np.array([1.0, 0.0]), np.array([0.0, 1.0]), k) == pytest.approx(math.exp(-0.5))
        assert kernel_value(np.array([1.0, 0.0]), np.array([0.0, 1.0]), k, support_scale=0.5) == pytest.approx(
            math.exp(-0.125)
        )

    def test_pads_to_equal_length(self):
        k = MmdKernel(kind=KernelKind.GAUSSIAN, sigma=1.0)
        assert kernel_value(np.array([1.0]), np.array([1.0, 0.0, 0.0]), k) == 1.0
        assert kernel_value(np.array([1.0, 0.0]), np.array([0.0, 1.0]), k) == pytest.approx(math.exp(-1.0))

    def test_gaussian_tv(self):
        k = MmdKernel(kind=KernelKind.GAUSSIAN_TV, sigma=1.0)
        assert kernel_value(np.array([0.5, 0.5]), np.array([0.0, 1.0]), k) == pytest.approx(math.exp(-0.125))

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            MmdKernel(kind=KernelKind.GAUSSIAN, sigma=0.0)


class TestMMD:
    def test_identical_sets(self, rng):
        k = MmdKernel(kind=KernelKind.GAUSSIAN_TV, sigma=1.0)
        items = [rng.dirichlet(np.ones(4)) for _ in range(5)]
        assert mmd2(items, items, k) == 0.0

    def test_separated_sets(self):
        k = MmdKernel(kind=KernelKind.GAUSSIAN_TV, sigma=1.0)
        a = [np.array([1.0, 0.0])] * 2
        b = [np.array([0.0, 1.0])] * 3
        assert mmd2(a, b, k) == pytest.approx(2.0 - 2.0 * math.exp(-0.5))

    def test_needs_two_items(self):
        k = MmdKernel(kind=KernelKind.GAUSSIAN, sigma=1.0)
        with pytest.raises(PreconditionError):
            mmd2([np.zeros(2)], [np.zeros(2), np.zeros(2)], k)

    def test_degree_mmd_separates_families(self):
        stars = [Graph.from_networkx(nx.star_graph(n)) for n in (4, 5, 6)]
        cliques = [Graph.from_networkx(nx.complete_graph(n)) for n in (4, 5, 6)]
        assert degree_mmd(stars, stars) == 0.0
        assert degree_mmd(stars, cliques) > 0.1


class TestValidity:
    table = ValenceTable(max_valence={0: 4, 1: 1})

    def test_single_graph(self):
        assert validity_no_correction(graph_from_key(((0, 1), (1,))), self.table)
        assert not validity_no_correction(graph_from_key(((0, 1), (2,))), self.table)

    def test_rate(self):
        graphs = [graph_from_key(((0, 1), (1,))), graph_from_key(((0, 1), (2,)))]
        assert validity_rate(graphs, self.table) == 0.5
        assert validity_rate([], self.table) == 0.0

    def test_unknown_category(self):
        with pytest.raises(ValidationError):
            validity_no_correction(graph_from_key(((0, 3), (1,))), self.table)


class TestIsomorphism:
    def test_uniqueness_ignores_node_order(self, rng):
        path = graph_from_key(((0, 0, 0), (1, 0, 1)))
        shuffled = permute(path, random_permutation(3, rng))
        triangle = graph_from_key(((0, 0, 0), (1, 1, 1)))
        assert uniqueness([path, shuffled, triangle]) == pytest.approx(2 / 3)

    def test_categories_distinguish_graphs(self):
        a = graph_from_key(((0, 1), (1,)))
        b = graph_from_key(((1, 1), (1,)))
        c = graph_from_key(((0, 1), (2,)))
        assert uniqueness([a, b, c]) == 1.0

    def test_novelty(self):
        path = graph_from_key(((0, 0, 0), (1, 0, 1)))
        relabeled = graph_from_key(((0, 0, 0), (1, 1, 0)))
        triangle = graph_from_key(((0, 0, 0), (1, 1, 1)))
        assert novelty([relabeled, triangle], [path]) == 0.5
        assert novelty([], [path]) == 0.0


class TestEnumeratedDistance:
    def test_half_l1(self):
        g = graph_from_key(((0, 0), (1,)))
        h = graph_from_key(((0, 0), (0,)))
        assert tv_distance_enumerated([g, g, h, h], {graph_key(g): 1.0}) == pytest.approx(0.5)
        assert tv_distance_enumerated([g], {graph_key(g): 1.0}) == 0.0

    def test_capacity(self):
        with pytest.raises(CapacityError):
            tv_distance_enumerated([Graph.empty(4)], {})


class TestEvaluate:
    @pytest.fixture
    def grids(self):
        return [Graph.from_networkx(nx.grid_2d_graph(a, b)) for a, b in [(2, 2), (2, 3), (3, 3), (2, 4)]]

    def test_identical_inputs(self, grids):
        report = evaluate(grids, grids, training=grids)
        assert report.degree_mmd == report.clustering_mmd == report.orbit_mmd == report.average == 0.0
        assert report.uniqueness == 1.0
        assert report.novelty == 0.0
        assert report.validity is None
        assert "validity skipped: no valence table configured" in report.notes
        assert report.n_samples == report.n_reference == 4

    def test_threads_and_validity(self, grids):
        cfg = MetricsConfig(valence_table=ValenceTable(max_valence={0: 3}))
        single = evaluate(grids, grids[::-1], cfg)
        pooled = evaluate(grids, grids[::-1], cfg, threads=3)
        assert single.model_dump() == pooled.model_dump()
        # interior node of the 3x3 grid has degree 4
        assert single.validity == 0.75
        assert single.novelty is None
