import numpy as np
import pytest

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import CapacityError, DomainError, PreconditionError, ValidationError
from flowgraph.models.config import QMode
from flowgraph.services.graphs import Graph, graph_from_key
from flowgraph.services.oracles import (
    EnumeratedFlow,
    analytic_path_derivative,
    exact_posterior,
    exact_sampler_oracle,
    kolmogorov_residual,
    marginal_velocity_oracle,
    path_marginal,
    run_checks,
    simulate_path_marginals,
    total_variation,
)
from flowgraph.services.prior import Prior, uniform_prior


@pytest.fixture
def coupling():
    """Two-node pairs over two node and two edge categories"""
    return [
        (graph_from_key(((0, 0), (0,))), graph_from_key(((1, 0), (1,))), 0.5),
        (graph_from_key(((0, 1), (1,))), graph_from_key(((1, 1), (0,))), 0.3),
        (graph_from_key(((1, 1), (0,))), graph_from_key(((0, 1), (1,))), 0.2),
        (graph_from_key(((0, 0), (0,))), graph_from_key(((0, 0), (1,))), 0.4),
    ]


@pytest.fixture
def skewed_prior():
    return Prior([0.3, 0.7], [0.6, 0.4], uniform_prior(2, 2, [2]).size_distribution)


class TestPath:
    def test_endpoints(self, coupling):
        flow = EnumeratedFlow(coupling, 2, 2)
        np.testing.assert_allclose(flow.marginal(1.0), flow.target())
        source_law = np.zeros(flow.n_states)
        np.add.at(source_law, flow.index_of(flow.x0), flow.weights)
        np.testing.assert_allclose(flow.marginal(0.0), source_law)

    def test_marginal_is_a_distribution(self, coupling):
        law = path_marginal(coupling, 0.37, 2, 2)
        assert sum(law.values()) == pytest.approx(1.0)
        assert all(p > 0 for p in law.values())

    @pytest.mark.parametrize("t", [0.1, 0.5, 0.8])
    def test_derivative_matches_finite_difference(self, coupling, t):
        flow = EnumeratedFlow(coupling, 2, 2)
        h = 1e-6
        numeric = (flow.marginal(t + h) - flow.marginal(t - h)) / (2 * h)
        np.testing.assert_allclose(flow.derivative(t), numeric, atol=1e-6)
        analytic = analytic_path_derivative(coupling, t, 2, 2)
        assert sum(analytic.values()) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.6, 0.95])
    def test_kolmogorov_point_mass(self, coupling, t):
        assert kolmogorov_residual(coupling, t, 2, 2) < 1e-9

    @pytest.mark.parametrize("t", [0.0, 0.3, 0.9])
    def test_kolmogorov_prior_mode(self, coupling, skewed_prior, t):
        assert kolmogorov_residual(coupling, t, 2, 2, QMode.PRIOR, skewed_prior) < 1e-9

    def test_padded_category_axes(self):
        coupling = [
            (graph_from_key(((0, 2), (1,))), graph_from_key(((1, 1), (0,))), 1.0),
            (graph_from_key(((2, 2), (0,))), graph_from_key(((0, 1), (1,))), 1.0),
        ]
        flow = EnumeratedFlow(coupling, 3, 2)
        assert flow.width == 3
        assert flow.n_states == 3 * 3 * 2
        assert flow.kolmogorov_residual(0.4) < 1e-9


class TestVelocity:
    def test_rates_are_generator_rows(self, coupling):
        velocity = marginal_velocity_oracle(graph_from_key(((0, 0), (0,))), 0.3, coupling, 2, 2)
        assert len(velocity.node_rates) == 2
        assert len(velocity.edge_rates) == 1
        for vector in velocity.node_rates + velocity.edge_rates:
            assert vector.rates.sum() == pytest.approx(0.0, abs=1e-12)
            assert vector.rates[vector.current] <= 0.0

    def test_generator_rows_sum_to_zero(self, coupling):
        u = EnumeratedFlow(coupling, 2, 2).generator(0.5)
        np.testing.assert_allclose(u.sum(axis=1), 0.0, atol=1e-12)

    def test_undefined_at_one(self, coupling):
        with pytest.raises(DomainError):
            EnumeratedFlow(coupling, 2, 2).marginal_rates(1.0)

    def test_state_size_must_match(self, coupling):
        with pytest.raises(PreconditionError):
            marginal_velocity_oracle(Graph.empty(3), 0.3, coupling, 2, 2)


class TestConstruction:
    def test_capacity(self):
        big = graph_from_key(((0,) * 4, (0,) * 6))
        with pytest.raises(CapacityError):
            EnumeratedFlow([(big, big, 1.0)], 2, 2)
        three = graph_from_key(((0, 0, 0), (0, 0, 0)))
        with pytest.raises(CapacityError):
            EnumeratedFlow([(three, three, 1.0)], 5, 5)

    def test_invalid_couplings(self):
        g = Graph.empty(2)
        with pytest.raises(PreconditionError):
            EnumeratedFlow([], 2, 2)
        with pytest.raises(PreconditionError):
            EnumeratedFlow([(g, Graph.empty(1), 1.0)], 2, 2)
        with pytest.raises(ValidationError):
            EnumeratedFlow([(g, g, 0.0)], 2, 2)
        with pytest.raises(PreconditionError):
            EnumeratedFlow([(g, g, 1.0)], 2, 2, QMode.PRIOR)


class TestPosterior:
    def test_concentrates_at_the_end(self, coupling):
        g1 = coupling[1][1]
        nodes, edges = exact_posterior(g1, 1.0, coupling, 2, 2)
        assert nodes.shape == (2, 2)
        assert edges.shape == (1, 2)
        np.testing.assert_allclose(nodes, [[0.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(edges, [[1.0, 0.0]])

    def test_rows_are_distributions(self, coupling):
        posterior = EnumeratedFlow(coupling, 2, 2).x1_posterior(0.4)
        reachable = posterior.sum(axis=-1) > 0
        np.testing.assert_allclose(posterior.sum(axis=-1)[reachable], 1.0)

    def test_source_conditioning(self, coupling):
        flow = EnumeratedFlow(coupling, 2, 2)
        source = flow.pair_source[0]
        posterior = flow.pair_posterior(0.5, source)
        assert not posterior[:, flow.pair_source != source].any()


class TestSampling:
    def test_exact_sampler_reaches_the_data(self, coupling):
        flow = EnumeratedFlow(coupling, 2, 2)
        assert total_variation(flow.exact_sampler(500), flow.target()) <= 0.02

    def test_exact_sampler_in_prior_mode(self, coupling, skewed_prior):
        law = exact_sampler_oracle(coupling, 500, 2, 2, QMode.PRIOR, skewed_prior)
        target = path_marginal(coupling, 1.0, 2, 2)
        support = set(law) | set(target)
        assert 0.5 * sum(abs(law.get(k, 0.0) - target.get(k, 0.0)) for k in support) <= 0.02

    def test_simulation_follows_the_marginal(self, coupling, rng):
        flow = EnumeratedFlow(coupling, 2, 2)
        laws = flow.simulate(20000, 100, [0.0, 0.5], rng)
        assert total_variation(laws[0.0], flow.marginal(0.0)) < 0.03
        assert total_variation(laws[0.5], flow.marginal(0.5)) < 0.05

    def test_single_dimension_simulation(self, rng):
        q = np.array([0.5, 0.3, 0.2])
        laws = simulate_path_marginals(2, q, [0.0, 0.5, 1.0], 20000, 100, rng)
        assert total_variation(laws[0.0], q) < 0.03
        assert total_variation(laws[0.5], 0.5 * np.eye(3)[2] + 0.5 * q) < 0.03
        assert laws[1.0].tolist() == [0.0, 0.0, 1.0]

    def test_more_steps_never_hurt(self):
        # one source, two fully correlated targets: the factorized first step is far off
        source = graph_from_key(((0, 0), (0,)))
        coupling = [(source, source, 0.5), (source, graph_from_key(((1, 1), (1,))), 0.5)]
        flow = EnumeratedFlow(coupling, 2, 2)
        target = flow.target()
        distances = [total_variation(flow.exact_sampler(n), target) for n in (1, 10, 100, 1000)]
        assert distances[0] == pytest.approx(0.75)
        assert all(b <= a for a, b in zip(distances, distances[1:]))
        assert distances[-1] < 0.01

    def test_n_steps_must_be_positive(self, coupling):
        with pytest.raises(PreconditionError):
            EnumeratedFlow(coupling, 2, 2).exact_sampler(0)


@pytest.mark.slow
def test_check_suite_passes():
    results = run_checks(seed=0, equivariance_trials=10)
    assert [r.name for r in results] == [
        "grad_check",
        "equivariance",
        "kolmogorov_consistency",
        "euler_kernel_validity",
        "exact_sampler",
        "assignment_optimality",
        "prior_projection",
    ]
    assert all(r.passed for r in results), [r for r in results if not r.passed]


@pytest.mark.slow
def test_monte_carlo_matches_the_path_marginal(coupling):
    flow = EnumeratedFlow(coupling, 2, 2)
    laws = flow.simulate(100_000, 500, [0.25, 0.5, 0.75], streams.stream(0, streams.CHECK, 101))
    for t, law in laws.items():
        assert total_variation(law, flow.marginal(t)) <= 0.02
