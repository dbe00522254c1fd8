import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import PreconditionError, ValidationError
from flowgraph.models.config import CouplingMode
from flowgraph.services.coupling import (
    SIZE_MISMATCH_PENALTY,
    CostMatrix,
    batch_cost_matrix,
    couple,
    hamming,
    noise_batch,
    plan_coupling,
    solve_assignment,
)
from flowgraph.services.datasets import gen_community_small
from flowgraph.services.graphs import Graph, Permutation, graph_from_key, permute
from flowgraph.services.prior import empirical_prior, uniform_prior
from tests.strategies import graphs, permutations


def test_hamming_counts_nodes_and_pairs():
    a = graph_from_key(((0, 1, 2), (1, 0, 0)))
    b = graph_from_key(((0, 2, 2), (0, 0, 1)))
    assert hamming(a, b) == 3.0
    assert hamming(a, b, lam=0.5) == 2.0
    assert hamming(a, a) == 0.0


def test_hamming_needs_equal_sizes():
    with pytest.raises(PreconditionError):
        hamming(Graph.empty(2), Graph.empty(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(graphs(n, n), graphs(n, n), permutations(n))))
def test_hamming_is_symmetric_and_relabeling_invariant(case):
    a, b, mapping = case
    p = Permutation(tuple(mapping))
    assert hamming(a, b, lam=0.7) == hamming(b, a, lam=0.7)
    assert hamming(permute(a, p), permute(b, p), lam=0.7) == hamming(a, b, lam=0.7)


def test_cost_matrix_validation():
    with pytest.raises(ValidationError):
        CostMatrix(np.array([[1.0, -1.0], [0.0, 0.0]]))
    with pytest.raises(ValidationError):
        CostMatrix(np.array([1.0, 2.0]))
    with pytest.raises(PreconditionError):
        solve_assignment(CostMatrix(np.ones((2, 3))))


def test_cost_matrix_penalizes_size_mismatch():
    noise = [Graph.empty(2), Graph.empty(3)]
    data = [Graph.empty(3), Graph.empty(2)]
    costs = batch_cost_matrix(noise, data)
    assert costs.entries[0, 0] == SIZE_MISMATCH_PENALTY
    assert costs.entries[0, 1] == 0.0
    plan = solve_assignment(costs)
    assert plan.assignment.mapping == (1, 0)
    assert plan.total_cost == 0.0


def test_cost_matrix_needs_matching_batches():
    with pytest.raises(PreconditionError):
        batch_cost_matrix([Graph.empty(2)], [])
    with pytest.raises(PreconditionError):
        batch_cost_matrix([Graph.empty(2)], [Graph.empty(2), Graph.empty(2)])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_assignment_is_optimal(size, seed):
    entries = np.random.default_rng(seed).integers(0, 30, size=(size, size)).astype(np.float64)
    best = min(entries[np.arange(size), list(p)].sum() for p in itertools.permutations(range(size)))
    assert solve_assignment(CostMatrix(entries)).total_cost == best


@settings(max_examples=30, deadline=None)
@given(st.lists(graphs(3, 3, node_types=2, edge_types=2), min_size=2, max_size=5), st.data())
def test_ot_never_costs_more_than_independent(data_graphs, draw):
    noise = [draw.draw(graphs(3, 3, node_types=2, edge_types=2)) for _ in data_graphs]
    ot = plan_coupling(noise, data_graphs, 1.0, CouplingMode.OT)
    independent = plan_coupling(noise, data_graphs, 1.0, CouplingMode.INDEPENDENT)
    assert ot.total_cost <= independent.total_cost
    assert independent.assignment.mapping == tuple(range(len(noise)))
    expected = sum(hamming(g0, g1) for g0, g1 in zip(noise, data_graphs))
    assert independent.total_cost == expected


@settings(max_examples=30, deadline=None)
@given(
    st.lists(graphs(3, 4, node_types=2, edge_types=2), min_size=2, max_size=5).flatmap(
        lambda data: st.tuples(
            st.just(data),
            st.lists(graphs(3, 4, node_types=2, edge_types=2), min_size=len(data), max_size=len(data)),
            permutations(len(data)),
            permutations(len(data)),
        )
    )
)
def test_ot_cost_ignores_batch_order(case):
    data, noise, order0, order1 = case
    cost = plan_coupling(noise, data, 1.0, CouplingMode.OT).total_cost
    shuffled_noise = [noise[i] for i in order0]
    shuffled_data = [data[i] for i in order1]
    assert plan_coupling(shuffled_noise, data, 1.0, CouplingMode.OT).total_cost == cost
    assert plan_coupling(noise, shuffled_data, 1.0, CouplingMode.OT).total_cost == cost


def test_couple_pairs_by_assignment():
    data = [graph_from_key(((1, 1), (1,))), graph_from_key(((0, 0), (0,)))]
    noise = [graph_from_key(((0, 0), (0,))), graph_from_key(((1, 1), (1,)))]
    pairs = couple(noise, data)
    assert all(g0 == g1 for g0, g1 in pairs)
    assert couple(noise, data, mode=CouplingMode.INDEPENDENT) == list(zip(noise, data))


def test_noise_batch_matches_sizes(labeled_graphs, rng):
    prior = uniform_prior(2, 2, [3, 4])
    noise = noise_batch(labeled_graphs, prior, rng)
    assert [g.n_nodes for g in noise] == [g.n_nodes for g in labeled_graphs]


@pytest.mark.slow
def test_ot_beats_independent_on_community_small():
    data = gen_community_small(400, seed=0)
    prior = empirical_prior(data)
    wins = 0
    for trial in range(100):
        rng = streams.stream(0, streams.CHECK, 100, trial)
        batch = [data[i] for i in rng.choice(len(data), size=16, replace=False)]
        noise = noise_batch(batch, prior, rng)
        ot = plan_coupling(noise, batch, 1.0, CouplingMode.OT).total_cost
        independent = plan_coupling(noise, batch, 1.0, CouplingMode.INDEPENDENT).total_cost
        wins += ot < independent
    assert wins >= 95
