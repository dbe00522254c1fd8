"""
Loss, gradient verification, optimizer steps and the training loop
"""

import logging
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import (
    ArtifactIOError,
    PreconditionError,
    TrainingDivergedError,
)
from flowgraph.models.config import ModelConfig, QMode, TrainConfig, ValenceTable
from flowgraph.models.report import LossReport
from flowgraph.services.checkpoint import save_checkpoint
from flowgraph.services.coupling import noise_batch, plan_coupling
from flowgraph.services.flow_path import sample_xt_batch, sample_xt_mixture_batch
from flowgraph.services.graphevo import GraphEvo, PosteriorLogits, build_model, record_kinks
from flowgraph.services.graphs import Graph
from flowgraph.services.prior import Prior, empirical_prior

logger = logging.getLogger(__name__)


def _targets(logits: PosteriorLogits, targets: Sequence[Graph]) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Padded target indices plus node and upper-pair masks"""
    B, N = logits.mask.shape
    if len(targets) != B:
        raise PreconditionError("one target per graph is required", {"logits": B, "targets": len(targets)})
    n_types, m_types = logits.node_logits.shape[-1], logits.edge_logits.shape[-1]
    nodes = np.zeros((B, N), dtype=np.int64)
    edges = np.zeros((B, N, N), dtype=np.int64)
    node_mask = np.zeros((B, N), dtype=bool)
    upper_mask = np.zeros((B, N, N), dtype=bool)
    for b, g in enumerate(targets):
        k = g.n_nodes
        if k > N or not bool(logits.mask[b, :k].all()) or bool(logits.mask[b, k:].any()):
            raise PreconditionError("target size does not match logits", {"index": b, "n_nodes": k})
        g.validate_categories(n_types, m_types)
        nodes[b, :k] = g.node_types
        edges[b, :k, :k] = g.edge_types
        node_mask[b, :k] = True
        upper_mask[b, :k, :k] = np.triu(np.ones((k, k), dtype=bool), k=1)
    return (
        torch.as_tensor(nodes),
        torch.as_tensor(edges),
        torch.as_tensor(node_mask),
        torch.as_tensor(upper_mask),
    )


def _batched(logits: PosteriorLogits) -> PosteriorLogits:
    if logits.node_logits.dim() == 2:
        return PosteriorLogits(
            logits.node_logits.unsqueeze(0), logits.edge_logits.unsqueeze(0), logits.mask.unsqueeze(0)
        )
    return logits


def ce_terms(logits: PosteriorLogits, targets: Sequence[Graph], w_edge: float) -> Tuple[Tensor, Tensor, Tensor]:
    """(total, node_term, edge_term) as differentiable tensors"""
    logits = _batched(logits)
    nodes, edges, node_mask, upper_mask = _targets(logits, targets)

    node_nll = -logits.node_log_probs().gather(-1, nodes.unsqueeze(-1)).squeeze(-1)
    edge_nll = -logits.edge_log_probs().gather(-1, edges.unsqueeze(-1)).squeeze(-1)

    node_term = node_nll[node_mask].mean()
    if upper_mask.any():
        edge_term = edge_nll[upper_mask].mean()
    else:
        edge_term = torch.zeros((), dtype=node_term.dtype)
    return node_term + w_edge * edge_term, node_term, edge_term


def ce_loss(logits: PosteriorLogits, target, w_edge: float = 5.0, step: int = 0) -> LossReport:
    """Cross-entropy of the clean graph(s) under the posterior logits"""
    targets = [target] if isinstance(target, Graph) else list(target)
    total, node_term, edge_term = ce_terms(logits, targets, w_edge)
    return LossReport(step=step, total=total.item(), node_term=node_term.item(), edge_term=edge_term.item())


def central_difference(f: Callable[[float], float], x: float, eps: float) -> float:
    return (f(x + eps) - f(x - eps)) / (2 * eps)


def _same_pattern(a: List[Tensor], b: List[Tensor]) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def grad_check(
    model: GraphEvo,
    g: Graph,
    t: float,
    eps: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
    w_edge: float = 5.0,
    max_redraws: int = 20,
) -> float:
    """Max relative error between autograd and central differences on random parameters.

    Every parameter tensor is perturbed at least once. Entries whose finite
    difference straddles a ReLU or max/min switch are redrawn.
    """
    if model.dtype != torch.float64:
        raise PreconditionError("gradient check requires a float64 model")
    was_training = model.training
    model.eval()
    rng = streams.stream(seed, streams.CHECK, 0)
    batch = model.collate([g], [t], sources=[g] if model.cfg.condition_on_source else None)

    def evaluate() -> Tuple[float, List[Tensor]]:
        with torch.no_grad(), record_kinks() as record:
            value = ce_terms(model(batch), [g], w_edge)[0].item()
        return value, record

    model.zero_grad()
    ce_terms(model(batch), [g], w_edge)[0].backward()
    _, base_pattern = evaluate()

    params = [p for p in model.parameters()]
    sizes = np.array([p.numel() for p in params])
    owners = list(range(len(params)))
    extra = max(0, n_params - len(params))
    owners += rng.choice(len(params), size=extra, p=sizes / sizes.sum()).tolist()

    worst = 0.0
    redrawn = skipped = 0
    try:
        for owner in owners:
            p = params[owner]
            flat = p.data.view(-1)
            for _ in range(max_redraws):
                index = int(rng.integers(p.numel()))
                original = flat[index].item()
                flat[index] = original + eps
                f_plus, pattern_plus = evaluate()
                flat[index] = original - eps
                f_minus, pattern_minus = evaluate()
                flat[index] = original
                if _same_pattern(pattern_plus, base_pattern) and _same_pattern(pattern_minus, base_pattern):
                    break
                redrawn += 1
            else:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            analytic = p.grad.view(-1)[index].item() if p.grad is not None else 0.0
            error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, error)
    finally:
        model.zero_grad()
        model.train(was_training)

    logger.info(
        f"Gradient check: {len(owners) - skipped} entries, {redrawn} redrawn near kinks, "
        f"{skipped} skipped, max relative error {worst:.3e}"
    )
    return worst


def interpolate(
    x0: Graph, x1: Graph, t: float, rng: np.random.Generator, q_mode: QMode, prior: Prior
) -> Graph:
    """Draw G_t from the conditional path, upper triangle only, then mirror"""
    n = x1.n_nodes
    iu = np.triu_indices(n, k=1)
    if q_mode == QMode.POINT_MASS:
        nodes = sample_xt_batch(x0.node_types, x1.node_types, t, rng)
        upper = sample_xt_batch(x0.edge_types[iu], x1.edge_types[iu], t, rng)
    else:
        nodes = sample_xt_mixture_batch(x1.node_types, prior.node_marginal, t, rng)
        upper = sample_xt_mixture_batch(x1.edge_types[iu], prior.edge_marginal, t, rng)
    edges = np.zeros((n, n), dtype=np.int64)
    edges[iu] = upper
    return Graph(nodes, edges + edges.T)


class Trainer:
    """Owns the optimizer; train_step is the single writer of the parameters"""

    def __init__(self, model: GraphEvo, prior: Prior, cfg: TrainConfig, seed: int = 0):
        if model.n_node_types != prior.n_node_types or model.n_edge_types != prior.n_edge_types:
            raise PreconditionError(
                "model and prior category counts differ",
                {"model": (model.n_node_types, model.n_edge_types), "prior": (prior.n_node_types, prior.n_edge_types)},
            )
        self.model = model
        self.prior = prior
        self.cfg = cfg
        self.seed = seed
        self.optimizer = torch.optim.Adam(
            model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8
        )

    def train_step(self, batch: Sequence[Graph], rng: np.random.Generator, step: int = 0) -> LossReport:
        """One coupled flow-matching update on a size-bucketed batch"""
        cfg = self.cfg
        model = self.model
        model.train()

        times = rng.random(len(batch))
        noise = noise_batch(batch, self.prior, rng)
        plan = plan_coupling(noise, batch, cfg.hamming_lambda, cfg.coupling_mode)
        targets = [batch[plan.assignment(i)] for i in range(len(batch))]
        states = [
            interpolate(x0, x1, float(t), rng, cfg.q_mode, self.prior)
            for x0, x1, t in zip(noise, targets, times)
        ]

        with torch.random.fork_rng():
            torch.manual_seed(streams.torch_seed(self.seed, streams.TRAIN, 1, step))
            sources = noise if model.cfg.condition_on_source else None
            logits = model(model.collate(states, times.tolist(), sources=sources))
            total, node_term, edge_term = ce_terms(logits, targets, cfg.edge_loss_weight)

            if not torch.isfinite(total):
                logger.error(f"Non-finite loss at step {step}")
                raise TrainingDivergedError(
                    "non-finite loss",
                    {
                        "step": step,
                        "node_term": node_term.item(),
                        "edge_term": edge_term.item(),
                        "t_min": float(times.min()),
                        "t_max": float(times.max()),
                    },
                )

            self.optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            self.optimizer.step()

        return LossReport(
            step=step,
            total=total.item(),
            node_term=node_term.item(),
            edge_term=edge_term.item(),
            pair_cost=plan.total_cost / len(batch),
        )


def size_buckets(dataset: Sequence[Graph]) -> Dict[int, List[int]]:
    buckets: Dict[int, List[int]] = {}
    for index, g in enumerate(dataset):
        buckets.setdefault(g.n_nodes, []).append(index)
    return buckets


def bucketed_batches(dataset: Sequence[Graph], batch_size: int, seed: int) -> Iterator[List[Graph]]:
    """Endless shuffled batches, each drawn from a single node count"""
    buckets = size_buckets(dataset)
    epoch = 0
    while True:
        rng = streams.stream(seed, streams.TRAIN, 0, epoch)
        batches = []
        for n in sorted(buckets):
            order = rng.permutation(buckets[n])
            batches += [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        for k in rng.permutation(len(batches)):
            yield [dataset[i] for i in batches[k]]
        epoch += 1


def train_loop(
    dataset: Sequence[Graph],
    cfg: TrainConfig,
    model_cfg: Optional[ModelConfig] = None,
    prior: Optional[Prior] = None,
    model: Optional[GraphEvo] = None,
    seed: Optional[int] = None,
    checkpoint_dir=None,
    log_path=None,
    valence_table: Optional[ValenceTable] = None,
    history: Optional[List[LossReport]] = None,
) -> GraphEvo:
    """Run cfg.steps train steps; deterministic given the seed"""
    if not dataset:
        raise PreconditionError("dataset must be non-empty")
    seed = streams.resolve_seed(cfg.seed if seed is None else seed)
    prior = prior or empirical_prior(dataset)
    if model is None:
        model = build_model(
            prior.n_node_types, prior.n_edge_types, model_cfg or ModelConfig(), seed, valence_table
        )
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if cfg.steps == 0:
        if checkpoint_dir:
            save_checkpoint(model, checkpoint_dir / "final.json")
        return model

    trainer = Trainer(model, prior, cfg, seed)
    batches = bucketed_batches(dataset, cfg.batch_size, seed)
    log_handle = None
    try:
        if log_path:
            Path(log_path).parent.mkdir(parents=True, exist_ok=True)
            log_handle = open(log_path, "a", encoding="utf-8")
        for step in range(cfg.steps):
            report = trainer.train_step(next(batches), streams.stream(seed, streams.TRAIN, 2, step), step)
            if history is not None:
                history.append(report)
            if log_handle:
                log_handle.write(report.model_dump_json() + "\n")
            if step % cfg.log_interval == 0 or step == cfg.steps - 1:
                logger.info(
                    f"Step {step}: loss {report.total:.4f} (node {report.node_term:.4f}, "
                    f"edge {report.edge_term:.4f}, pair cost {report.pair_cost:.2f})"
                )
            if checkpoint_dir and cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
                save_checkpoint(model, checkpoint_dir / f"step_{step + 1:07d}.json")
    except OSError as e:
        logger.error(f"Failed to write training log {log_path}: {str(e)}")
        raise ArtifactIOError(f"cannot write training log: {e.strerror}", {"path": str(log_path)})
    finally:
        if log_handle:
            log_handle.close()

    if checkpoint_dir:
        save_checkpoint(model, checkpoint_dir / "final.json")
    return model
