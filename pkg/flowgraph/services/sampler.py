"""
Euler-discretized CTMC sampling from the learned posterior
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import PreconditionError
from flowgraph.models.config import QMode, SampleConfig
from flowgraph.services.flow_path import categorical, euler_kernel_batch, one_hot, temper
from flowgraph.services.graphevo import GraphEvo
from flowgraph.services.graphs import Graph
from flowgraph.services.prior import Prior, sample_prior_graph, sample_size

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    """One recorded chain: states at every time, and per-step log p(terminal | state)"""

    times: List[float]
    states: List[Graph]
    log_probs: List[float]
    source: Graph
    terminal_reward: Optional[float] = None
    intermediate_rewards: List[float] = field(default_factory=list)

    @property
    def terminal(self) -> Graph:
        return self.states[-1]


@dataclass
class SampleResult:
    graphs: List[Graph]
    trajectories: List[Trajectory] = field(default_factory=list)


@contextmanager
def single_threaded_torch() -> Iterator[None]:
    """Pin intra-op parallelism to one thread so results do not depend on the worker count"""
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def _reference(g0: Graph, prior: Prior, q_mode: QMode) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension q for nodes and upper-triangle edges"""
    iu = np.triu_indices(g0.n_nodes, k=1)
    if q_mode == QMode.POINT_MASS:
        return one_hot(g0.node_types, prior.n_node_types), one_hot(g0.edge_types[iu], prior.n_edge_types)
    n_pairs = iu[0].shape[0]
    return (
        np.tile(prior.node_marginal, (g0.n_nodes, 1)),
        np.tile(prior.edge_marginal, (n_pairs, 1)),
    )


def transition_step(
    xt: Graph,
    node_probs: np.ndarray,
    edge_probs: np.ndarray,
    q_nodes: np.ndarray,
    q_edges: np.ndarray,
    t: float,
    dt: float,
    rng: np.random.Generator,
    temperature: float = 1.0,
    literal_temperature: bool = False,
) -> Graph:
    """Draw G1_hat from the posterior, then move every dimension by the Euler kernel.

    ``edge_probs`` holds the upper triangle only, row-major.
    """
    n = xt.n_nodes
    iu = np.triu_indices(n, k=1)
    x1_nodes = categorical(node_probs, rng)
    x1_edges = categorical(edge_probs, rng)

    node_kernel = temper(euler_kernel_batch(xt.node_types, x1_nodes, q_nodes, t, dt), temperature, literal_temperature)
    edge_kernel = temper(
        euler_kernel_batch(xt.edge_types[iu], x1_edges, q_edges, t, dt), temperature, literal_temperature
    )
    nodes = categorical(node_kernel, rng)
    upper = categorical(edge_kernel, rng)
    edges = np.zeros((n, n), dtype=np.int64)
    edges[iu] = upper
    return Graph(nodes, edges + edges.T)


def expected_kernel_batch(
    xt: np.ndarray, posterior: np.ndarray, q: np.ndarray, t: float, dt: float
) -> np.ndarray:
    """Per-dimension transition law with G1_hat marginalized under the posterior"""
    cardinality = q.shape[-1]
    total = np.zeros(q.shape)
    for k in range(cardinality):
        target = np.full(np.shape(xt), k)
        total += posterior[..., k:k + 1] * euler_kernel_batch(xt, target, q, t, dt)
    return total


class _Chunk:
    """A fixed group of chains advanced together through the network"""

    def __init__(self, model: GraphEvo, prior: Prior, cfg: SampleConfig, seed: int, key: Tuple[int, ...],
                 temperature: float, literal_temperature: bool):
        self.model = model
        self.prior = prior
        self.cfg = cfg
        self.seed = seed
        self.key = key
        self.temperature = temperature
        self.literal_temperature = literal_temperature

    def run(self, chains: Sequence[int]) -> List[Tuple[Graph, Optional[Trajectory]]]:
        cfg = self.cfg
        sources = []
        for chain in chains:
            rng = streams.stream(self.seed, *self.key, chain, 0)
            sources.append(sample_prior_graph(self.prior, sample_size(self.prior, rng), rng))
        references = [_reference(g0, self.prior, cfg.q_mode) for g0 in sources]
        states = list(sources)
        history: List[List[Graph]] = [[g] for g in sources]
        posteriors: List[List[Tuple[np.ndarray, np.ndarray]]] = [[] for _ in chains]

        dt = 1.0 / cfg.n_steps
        conditioning = sources if self.model.cfg.condition_on_source else None
        for step in range(cfg.n_steps):
            t = step * dt
            with torch.no_grad():
                logits = self.model(self.model.collate(states, [t] * len(states), sources=conditioning))
                node_lp = logits.node_log_probs().double().numpy()
                edge_lp = logits.edge_log_probs().double().numpy()

            for c, chain in enumerate(chains):
                n = states[c].n_nodes
                iu = np.triu_indices(n, k=1)
                nodes_lp = node_lp[c, :n]
                upper_lp = edge_lp[c, :n, :n][iu]
                rng = streams.stream(self.seed, *self.key, chain, step + 1)
                q_nodes, q_edges = references[c]
                states[c] = transition_step(
                    states[c], np.exp(nodes_lp), np.exp(upper_lp), q_nodes, q_edges, t, dt, rng,
                    self.temperature, self.literal_temperature,
                )
                if cfg.record_trajectory:
                    history[c].append(states[c])
                    posteriors[c].append((nodes_lp, upper_lp))

        results = []
        for c in range(len(chains)):
            trajectory = None
            if cfg.record_trajectory:
                trajectory = _trajectory(history[c], posteriors[c], sources[c], cfg.n_steps)
            results.append((states[c], trajectory))
        return results


def _trajectory(states: List[Graph], posteriors, source: Graph, n_steps: int) -> Trajectory:
    terminal = states[-1]
    iu = np.triu_indices(terminal.n_nodes, k=1)
    nodes = terminal.node_types
    upper = terminal.edge_types[iu]
    log_probs = []
    for nodes_lp, upper_lp in posteriors:
        value = nodes_lp[np.arange(nodes.shape[0]), nodes].sum()
        if upper.shape[0]:
            value += upper_lp[np.arange(upper.shape[0]), upper].sum()
        log_probs.append(float(value))
    times = [step / n_steps for step in range(n_steps)] + [1.0]
    return Trajectory(times=times, states=states, log_probs=log_probs, source=source)


def sample(
    model: GraphEvo,
    prior: Prior,
    cfg: SampleConfig,
    threads: int = 1,
    temperature: float = 1.0,
    literal_temperature: bool = False,
    key: Tuple[int, ...] = (streams.SAMPLE,),
) -> SampleResult:
    """Generate cfg.n_samples graphs; output is independent of ``threads``"""
    if model.n_node_types != prior.n_node_types or model.n_edge_types != prior.n_edge_types:
        raise PreconditionError(
            "model and prior category counts differ",
            {"model": (model.n_node_types, model.n_edge_types), "prior": (prior.n_node_types, prior.n_edge_types)},
        )
    seed = streams.resolve_seed(cfg.seed)
    chunk = _Chunk(model, prior, cfg, seed, key, temperature, literal_temperature)
    groups = [
        list(range(start, min(start + cfg.chunk_size, cfg.n_samples)))
        for start in range(0, cfg.n_samples, cfg.chunk_size)
    ]

    was_training = model.training
    model.eval()
    try:
        with single_threaded_torch():
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    outputs = list(pool.map(chunk.run, groups))
            else:
                outputs = [chunk.run(group) for group in groups]
    finally:
        model.train(was_training)

    result = SampleResult(graphs=[])
    for done, output in enumerate(outputs, start=1):
        for graph, trajectory in output:
            result.graphs.append(graph)
            if trajectory is not None:
                result.trajectories.append(trajectory)
        if done % 10 == 0 or done == len(outputs):
            logger.info(f"Sampled {len(result.graphs)}/{cfg.n_samples} graphs")
    return result
