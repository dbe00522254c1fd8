"""
Exhaustive-enumeration oracles over tiny graph spaces, and the built-in
check suite run by ``flowgraph check``
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import CapacityError, DomainError, PreconditionError, ValidationError
from flowgraph.models.config import ModelConfig, QMode
from flowgraph.models.report import CheckResult
from flowgraph.services.coupling import CostMatrix, solve_assignment
from flowgraph.services.flow_path import (
    RateVector,
    categorical,
    conditional_rates_batch,
    euler_kernel_batch,
    one_hot,
    temper,
)
from flowgraph.services.graphevo import GraphEvo, build_model, forward
from flowgraph.services.graphs import (
    Graph,
    GraphKey,
    Permutation,
    graph_from_key,
    graph_key,
    permute,
    permute_array,
    random_permutation,
)
from flowgraph.services.prior import Prior, projection_distances
from flowgraph.services.sampler import expected_kernel_batch
from flowgraph.services.training import grad_check

logger = logging.getLogger(__name__)

ENUMERABLE_MAX_NODES = 3
MAX_STATES = 4096

Coupling = Sequence[Tuple[Graph, Graph, float]]


@dataclass(frozen=True)
class MarginalVelocity:
    node_rates: List[RateVector]
    edge_rates: List[RateVector]


class EnumeratedFlow:
    """The conditional flow of an explicit coupling, laid out over every labeled graph of one size.

    Graphs are flattened to dimension vectors: node categories, then the
    upper-triangle edge categories. Category axes are padded to a common
    width with zero-probability slots.
    """

    def __init__(
        self,
        coupling: Coupling,
        n_node_types: int,
        n_edge_types: int,
        q_mode: QMode = QMode.POINT_MASS,
        prior: Optional[Prior] = None,
        max_states: int = MAX_STATES,
    ):
        if not coupling:
            raise PreconditionError("coupling is empty")
        sizes = {g.n_nodes for g0, g1, _ in coupling for g in (g0, g1)}
        if len(sizes) != 1:
            raise PreconditionError("coupling mixes graph sizes", {"sizes": sorted(sizes)})
        n = sizes.pop()
        if n > ENUMERABLE_MAX_NODES:
            raise CapacityError("graph space too large to enumerate", {"n_nodes": n})

        self.n_nodes = n
        self.n_node_types = n_node_types
        self.n_edge_types = n_edge_types
        self.q_mode = q_mode
        n_pairs = n * (n - 1) // 2
        self.cards = np.array([n_node_types] * n + [n_edge_types] * n_pairs, dtype=np.int64)
        self.width = max(n_node_types, n_edge_types)
        total = int(np.prod(self.cards))
        if total > max_states:
            raise CapacityError("graph space too large to enumerate", {"size": total, "limit": max_states})
        self.states = np.array(list(itertools.product(*[range(c) for c in self.cards])), dtype=np.int64)

        weights = np.array([w for _, _, w in coupling], dtype=np.float64)
        if (weights < 0).any() or weights.sum() <= 0:
            raise ValidationError("coupling weights must be non-negative with positive total")
        self.weights = weights / weights.sum()
        for g0, g1, _ in coupling:
            g0.validate_categories(n_node_types, n_edge_types)
            g1.validate_categories(n_node_types, n_edge_types)
        self.x0 = np.stack([self.flatten(g0) for g0, _, _ in coupling])
        self.x1 = np.stack([self.flatten(g1) for _, g1, _ in coupling])

        if q_mode == QMode.PRIOR:
            if prior is None:
                raise PreconditionError("prior-mode path needs a prior")
            node_q = np.pad(prior.node_marginal, (0, self.width - n_node_types))
            edge_q = np.pad(prior.edge_marginal, (0, self.width - n_edge_types))
            per_dim = np.stack([node_q] * n + [edge_q] * n_pairs)
            self.q = np.broadcast_to(per_dim, (len(coupling),) + per_dim.shape).copy()
            self.pair_source = np.zeros(len(coupling), dtype=np.int64)
            self.n_sources = 1
        else:
            self.q = one_hot(self.x0, self.width)
            _, inverse = np.unique(self.x0, axis=0, return_inverse=True)
            self.pair_source = np.asarray(inverse).reshape(-1)
            self.n_sources = int(self.pair_source.max()) + 1

    # -- layout -------------------------------------------------------------

    @property
    def n_dims(self) -> int:
        return int(self.cards.shape[0])

    @property
    def n_states(self) -> int:
        return int(self.states.shape[0])

    def flatten(self, g: Graph) -> np.ndarray:
        nodes, upper = graph_key(g)
        return np.array(nodes + upper, dtype=np.int64)

    def unflatten(self, values: np.ndarray) -> Graph:
        values = [int(v) for v in values]
        return graph_from_key((tuple(values[: self.n_nodes]), tuple(values[self.n_nodes:])))

    def index_of(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(values)
        return np.ravel_multi_index(tuple(values.T), tuple(self.cards))

    def distribution(self, vector: np.ndarray) -> Dict[GraphKey, float]:
        return {graph_key(self.unflatten(self.states[s])): float(p) for s, p in enumerate(vector) if p > 0}

    def target(self) -> np.ndarray:
        """Data marginal of the coupling over the enumerated space"""
        out = np.zeros(self.n_states)
        np.add.at(out, self.index_of(self.x1), self.weights)
        return out

    # -- path ---------------------------------------------------------------

    def _factors(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Per pair, state and dimension: p_t(value) and its time derivative"""
        target = one_hot(self.x1, self.width)
        pt = t * target + (1.0 - t) * self.q
        dp = target - self.q
        dims = np.arange(self.n_dims)[None, :]
        return pt[:, dims, self.states], dp[:, dims, self.states]

    def conditional_probs(self, t: float) -> np.ndarray:
        return self._factors(t)[0].prod(axis=-1)

    def marginal(self, t: float) -> np.ndarray:
        return self.weights @ self.conditional_probs(t)

    def derivative(self, t: float) -> np.ndarray:
        vals, dvals = self._factors(t)
        total = np.zeros(vals.shape[:2])
        for d in range(self.n_dims):
            total += dvals[..., d] * np.delete(vals, d, axis=-1).prod(axis=-1)
        return self.weights @ total

    def pair_posterior(self, t: float, source: Optional[int] = None, fallback: bool = False) -> np.ndarray:
        """(states, pairs) posterior over coupled pairs given G_t, optionally also given G_0"""
        prior_weights = self.weights.copy()
        if source is not None:
            prior_weights = prior_weights * (self.pair_source == source)
        joint = prior_weights[None, :] * self.conditional_probs(t).T
        norm = joint.sum(axis=1, keepdims=True)
        posterior = np.where(norm > 0, joint / np.where(norm > 0, norm, 1.0), 0.0)
        if fallback:
            empty = norm[:, 0] <= 0
            posterior[empty] = prior_weights / prior_weights.sum()
        return posterior

    def x1_posterior(self, t: float, source: Optional[int] = None, fallback: bool = False) -> np.ndarray:
        """(states, dims, width) per-dimension posterior of the data endpoint"""
        return np.einsum("sp,pdw->sdw", self.pair_posterior(t, source, fallback), one_hot(self.x1, self.width))

    def marginal_rates(self, t: float, source: Optional[int] = None) -> np.ndarray:
        """(states, dims, width) posterior-averaged conditional rates"""
        if t >= 1.0:
            raise DomainError("marginal velocity is undefined at t >= 1", {"t": t})
        posterior = self.pair_posterior(t, source)
        n_pairs = self.x1.shape[0]
        xt = np.broadcast_to(self.states[:, None, :], (self.n_states, n_pairs, self.n_dims))
        x1 = np.broadcast_to(self.x1[None], xt.shape)
        q = np.broadcast_to(self.q[None], xt.shape + (self.width,))
        rates = conditional_rates_batch(xt, x1, q, t)
        return np.einsum("sp,spdw->sdw", posterior, rates)

    def generator(self, t: float) -> np.ndarray:
        """(states, states) graph-level rate matrix of the factorized marginal rates"""
        rates = self.marginal_rates(t)
        u = np.zeros((self.n_states, self.n_states))
        for s, values in enumerate(self.states):
            for d in range(self.n_dims):
                for k in range(int(self.cards[d])):
                    if k == values[d]:
                        u[s, s] += rates[s, d, k]
                        continue
                    moved = values.copy()
                    moved[d] = k
                    u[s, self.index_of(moved)[0]] += rates[s, d, k]
        return u

    def kolmogorov_residual(self, t: float) -> float:
        """max over graphs of |d/dt p_t - p_t U|"""
        return float(np.max(np.abs(self.derivative(t) - self.marginal(t) @ self.generator(t))))

    # -- sampling -----------------------------------------------------------

    def _initial(self) -> np.ndarray:
        """(sources, states) joint law of (G_0, G_t) at t = 0"""
        joint = np.zeros((self.n_sources, self.n_states))
        if self.q_mode == QMode.PRIOR:
            dims = np.arange(self.n_dims)[None, :]
            joint[0] = self.q[0][dims, self.states].prod(axis=-1)
            return joint
        np.add.at(joint, (self.pair_source, self.index_of(self.x0)), self.weights)
        return joint

    def _source_q(self, source: int) -> np.ndarray:
        return self.q[int(np.flatnonzero(self.pair_source == source)[0])]

    def exact_sampler(self, n_steps: int, temperature: float = 1.0, literal: bool = False) -> np.ndarray:
        """Terminal law of the Euler sampler driven by the exact posterior, propagated without sampling"""
        if n_steps < 1:
            raise PreconditionError("n_steps must be positive", {"n_steps": n_steps})
        joint = self._initial()
        dt = 1.0 / n_steps
        for step in range(n_steps):
            t = step * dt
            following = np.zeros_like(joint)
            for source in range(self.n_sources):
                if not joint[source].any():
                    continue
                posterior = self.x1_posterior(t, source, fallback=True)
                q = np.broadcast_to(self._source_q(source), posterior.shape)
                kernel = temper(expected_kernel_batch(self.states, posterior, q, t, dt), temperature, literal)
                transition = np.ones((self.n_states, self.n_states))
                for d in range(self.n_dims):
                    transition *= kernel[:, d, :][:, self.states[:, d]]
                following[source] = joint[source] @ transition
            joint = following
        return joint.sum(axis=0)

    def simulate(
        self,
        n_chains: int,
        n_steps: int,
        record_times: Sequence[float],
        rng: np.random.Generator,
        temperature: float = 1.0,
    ) -> Dict[float, np.ndarray]:
        """Monte Carlo chains with x1_hat drawn from the exact posterior; empirical laws at the recorded times"""
        pair = categorical(np.broadcast_to(self.weights, (n_chains, self.weights.shape[0])), rng)
        source = self.pair_source[pair]
        q = self.q[pair]
        if self.q_mode == QMode.PRIOR:
            values = categorical(q, rng)
        else:
            values = self.x0[pair].copy()

        record = {int(round(t * n_steps)): t for t in record_times}
        out: Dict[float, np.ndarray] = {}

        def histogram() -> np.ndarray:
            return np.bincount(self.index_of(values), minlength=self.n_states) / n_chains

        if 0 in record:
            out[record[0]] = histogram()
        dt = 1.0 / n_steps
        for step in range(n_steps):
            t = step * dt
            tables = np.stack([self.x1_posterior(t, s, fallback=True) for s in range(self.n_sources)])
            posterior = tables[source, self.index_of(values)]
            x1_hat = categorical(posterior, rng)
            kernel = temper(euler_kernel_batch(values, x1_hat, q, t, dt), temperature)
            values = categorical(kernel, rng)
            if step + 1 in record:
                out[record[step + 1]] = histogram()
        return out


def marginal_velocity_oracle(
    gt: Graph,
    t: float,
    coupling: Coupling,
    n_node_types: int,
    n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS,
    prior: Optional[Prior] = None,
) -> MarginalVelocity:
    """Per-dimension marginal rates at G_t by exhaustive Bayes over the coupling"""
    flow = EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior)
    if gt.n_nodes != flow.n_nodes:
        raise PreconditionError("state size differs from the coupling", {"n_nodes": gt.n_nodes})
    gt.validate_categories(n_node_types, n_edge_types)
    values = flow.flatten(gt)
    rates = flow.marginal_rates(t)[flow.index_of(values)[0]]
    vectors = [RateVector(rates=rates[d, : flow.cards[d]].copy(), current=int(values[d])) for d in range(flow.n_dims)]
    return MarginalVelocity(node_rates=vectors[: flow.n_nodes], edge_rates=vectors[flow.n_nodes:])


def path_marginal(
    coupling: Coupling, t: float, n_node_types: int, n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS, prior: Optional[Prior] = None,
) -> Dict[GraphKey, float]:
    flow = EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior)
    return flow.distribution(flow.marginal(t))


def analytic_path_derivative(
    coupling: Coupling, t: float, n_node_types: int, n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS, prior: Optional[Prior] = None,
) -> Dict[GraphKey, float]:
    flow = EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior)
    derivative = flow.derivative(t)
    return {graph_key(flow.unflatten(flow.states[s])): float(v) for s, v in enumerate(derivative)}


def kolmogorov_residual(
    coupling: Coupling, t: float, n_node_types: int, n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS, prior: Optional[Prior] = None,
) -> float:
    return EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior).kolmogorov_residual(t)


def exact_posterior(
    gt: Graph, t: float, coupling: Coupling, n_node_types: int, n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS, prior: Optional[Prior] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension posterior of G1 given G_t: (n, node types) and (pairs, edge types)"""
    flow = EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior)
    posterior = flow.x1_posterior(t)[flow.index_of(flow.flatten(gt))[0]]
    n = flow.n_nodes
    return posterior[:n, :n_node_types], posterior[n:, :n_edge_types]


def exact_sampler_oracle(
    coupling: Coupling, n_steps: int, n_node_types: int, n_edge_types: int,
    q_mode: QMode = QMode.POINT_MASS, prior: Optional[Prior] = None,
    temperature: float = 1.0, literal_temperature: bool = False,
) -> Dict[GraphKey, float]:
    flow = EnumeratedFlow(coupling, n_node_types, n_edge_types, q_mode, prior)
    return flow.distribution(flow.exact_sampler(n_steps, temperature, literal_temperature))


def simulate_path_marginals(
    x1: int, q: np.ndarray, times: Sequence[float], n_chains: int, n_steps: int, rng: np.random.Generator
) -> Dict[float, np.ndarray]:
    """One dimension: chains from x0 ~ q moved by the Euler kernel towards the true x1"""
    q = np.asarray(q, dtype=np.float64)
    cardinality = q.shape[-1]
    record = {int(round(t * n_steps)): t for t in times}
    qs = np.broadcast_to(q, (n_chains, cardinality))
    target = np.full(n_chains, x1)
    values = categorical(qs, rng)
    out: Dict[float, np.ndarray] = {}
    if 0 in record:
        out[record[0]] = np.bincount(values, minlength=cardinality) / n_chains
    dt = 1.0 / n_steps
    for step in range(n_steps):
        values = categorical(euler_kernel_batch(values, target, qs, step * dt, dt), rng)
        if step + 1 in record:
            out[record[step + 1]] = np.bincount(values, minlength=cardinality) / n_chains
    return out


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------------------
# check suite
# ---------------------------------------------------------------------------


def equivariance_error(model: GraphEvo, g: Graph, t: float, p: Permutation) -> float:
    """max |f(pi . g) - pi . f(g)| over node and edge logits"""
    with torch.no_grad():
        base = forward(model, g, t)
        moved = forward(model, permute(g, p), t)
    nodes = permute_array(base.node_logits.double().numpy(), p, [0])
    edges = permute_array(base.edge_logits.double().numpy(), p, [0, 1])
    return max(
        float(np.max(np.abs(moved.node_logits.double().numpy() - nodes))),
        float(np.max(np.abs(moved.edge_logits.double().numpy() - edges))),
    )


def _random_graph(n: int, n_node_types: int, n_edge_types: int, rng: np.random.Generator) -> Graph:
    upper = rng.integers(n_edge_types, size=n * (n - 1) // 2)
    edges = np.zeros((n, n), dtype=np.int64)
    edges[np.triu_indices(n, k=1)] = upper
    return Graph(rng.integers(n_node_types, size=n), edges + edges.T)


def _check_model(seed: int) -> GraphEvo:
    cfg = ModelConfig(n_layers=2, n_heads=2, dx=16, de=8, dy=8, dropout=0.0, time_embedding_dim=8, float64=True)
    return build_model(3, 3, cfg, seed=seed)


def _check_gradients(seed: int) -> CheckResult:
    rng = streams.stream(seed, streams.CHECK, 1)
    model = _check_model(seed)
    worst = grad_check(model, _random_graph(4, 3, 3, rng), 0.4, eps=1e-5, seed=seed)
    return CheckResult(name="grad_check", passed=worst < 1e-4, value=worst, threshold=1e-4)


def _check_equivariance(seed: int, trials: int) -> CheckResult:
    rng = streams.stream(seed, streams.CHECK, 2)
    model = _check_model(seed)
    model.eval()
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        g = _random_graph(n, 3, 3, rng)
        worst = max(worst, equivariance_error(model, g, float(rng.random()), random_permutation(n, rng)))
    return CheckResult(name="equivariance", passed=worst < 1e-6, value=worst, threshold=1e-6,
                       detail=f"{trials} random (graph, permutation) pairs")


def _toy_coupling(rng: np.random.Generator, n_pairs: int = 6) -> List[Tuple[Graph, Graph, float]]:
    return [
        (_random_graph(2, 2, 2, rng), _random_graph(2, 2, 2, rng), float(rng.random()) + 0.1)
        for _ in range(n_pairs)
    ]


def _check_kolmogorov(seed: int) -> CheckResult:
    coupling = _toy_coupling(streams.stream(seed, streams.CHECK, 3))
    flow = EnumeratedFlow(coupling, 2, 2)
    worst = max(flow.kolmogorov_residual(t) for t in np.linspace(0.0, 0.95, 11))
    return CheckResult(name="kolmogorov_consistency", passed=worst < 1e-6, value=worst, threshold=1e-6,
                       detail="11 time points on a 2-node space")


def _check_kernels(seed: int) -> CheckResult:
    rng = streams.stream(seed, streams.CHECK, 4)
    worst = 0.0
    for _ in range(200):
        cardinality = int(rng.integers(2, 6))
        q = rng.dirichlet(np.ones(cardinality))
        t = float(rng.random()) * 0.99
        dt = float(rng.uniform(1e-4, 1.0 - t))
        kernel = euler_kernel_batch(
            rng.integers(cardinality, size=8), rng.integers(cardinality, size=8), np.tile(q, (8, 1)), t, dt
        )
        if (kernel < 0).any():
            worst = float("inf")
        worst = max(worst, float(np.max(np.abs(kernel.sum(axis=-1) - 1.0))))
    return CheckResult(name="euler_kernel_validity", passed=worst < 1e-12, value=worst, threshold=1e-12)


def _check_exact_sampler(seed: int) -> CheckResult:
    coupling = _toy_coupling(streams.stream(seed, streams.CHECK, 5))
    flow = EnumeratedFlow(coupling, 2, 2)
    tv = total_variation(flow.exact_sampler(500), flow.target())
    return CheckResult(name="exact_sampler", passed=tv <= 0.02, value=tv, threshold=0.02,
                       detail="terminal law against the data marginal, 500 steps")


def _check_assignment(seed: int) -> CheckResult:
    rng = streams.stream(seed, streams.CHECK, 6)
    worst = 0.0
    for _ in range(20):
        size = int(rng.integers(1, 7))
        entries = rng.integers(0, 20, size=(size, size)).astype(np.float64)
        best = min(entries[np.arange(size), list(perm)].sum() for perm in itertools.permutations(range(size)))
        worst = max(worst, abs(solve_assignment(CostMatrix(entries)).total_cost - best))
    return CheckResult(name="assignment_optimality", passed=worst == 0.0, value=worst, threshold=0.0)


def _check_projection(seed: int) -> CheckResult:
    """The empirical product prior must be at least as close to the joint as
    every random product, measured by KL(joint || product).

    Euclidean distance does not rank it first in general: for the joint
    0.8 on (0, 0) and 0.2 on (1, 1), the tied product with marginal 0.85 has
    squared distance 0.070 against 0.1024 for the empirical 0.8. The
    Euclidean count is reported in the detail only.
    """
    rng = streams.stream(seed, streams.CHECK, 7)
    dataset = [_random_graph(3, 2, 2, rng) for _ in range(12)]
    own, random = projection_distances(dataset, 2, 2, 1000, streams.stream(seed, streams.CHECK, 8))
    own_l2, random_l2 = projection_distances(
        dataset, 2, 2, 1000, streams.stream(seed, streams.CHECK, 8), metric="euclidean"
    )
    margin = float(random.min() - own)
    closer = int((random_l2 < own_l2).sum())
    return CheckResult(name="prior_projection", passed=margin >= 0.0, value=margin, threshold=0.0,
                       detail=f"KL against 1000 random products; {closer} of them are closer in Euclidean distance")


def run_checks(seed: int = 0, equivariance_trials: int = 100) -> List[CheckResult]:
    """Gradient, equivariance, Kolmogorov, kernel, exact sampler, assignment
    and prior projection checks, in that order. The projection check uses KL
    because the empirical product is the KL projection of the joint, not
    always the Euclidean one.
    """
    results = [
        _check_gradients(seed),
        _check_equivariance(seed, equivariance_trials),
        _check_kolmogorov(seed),
        _check_kernels(seed),
        _check_exact_sampler(seed),
        _check_assignment(seed),
        _check_projection(seed),
    ]
    for result in results:
        status = "ok" if result.passed else "FAILED"
        logger.info(f"Check {result.name}: {status} (value {result.value:.3e}, threshold {result.threshold:.1e})")
    return results
