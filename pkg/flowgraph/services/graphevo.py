"""
GraphEvo: edge-augmented graph transformer producing posterior logits over
clean node and edge categories.

Nodes attend to each other with edge-modulated scores, edges are updated by a
triangle contraction over intermediate nodes, and a global channel exchanges
information with both through FiLM and PNA.
"""

import logging
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from flowgraph.core import rng as streams
from flowgraph.core.config import settings
from flowgraph.core.exceptions import CapacityError, PreconditionError
from flowgraph.models.config import ModelConfig, ValenceTable
from flowgraph.services.features import COUNT_FEATURES, NODE_FEATURES, structural_features
from flowgraph.services.graphs import Graph

logger = logging.getLogger(__name__)

_kink_record: ContextVar[Optional[List[Tensor]]] = ContextVar("kink_record", default=None)


@contextmanager
def record_kinks() -> Iterator[List[Tensor]]:
    """Collect ReLU sign patterns and PNA extremum indices of the forward passes inside"""
    record: List[Tensor] = []
    token = _kink_record.set(record)
    try:
        yield record
    finally:
        _kink_record.reset(token)


def _note(pattern: Tensor) -> None:
    record = _kink_record.get()
    if record is not None:
        record.append(pattern.detach().clone())


class ReLU(nn.Module):
    def forward(self, x: Tensor) -> Tensor:
        _note(x > 0)
        return torch.relu(x)


class FiLM(nn.Module):
    """x1 * (Linear(x2) + 1) + Linear'(x2)"""

    def __init__(self, d_cond: int, d_out: int):
        super().__init__()
        self.scale = nn.Linear(d_cond, d_out)
        self.shift = nn.Linear(d_cond, d_out)

    def forward(self, x1: Tensor, x2: Tensor) -> Tensor:
        if x2.shape[-1] != self.scale.in_features or x1.shape[-1] != self.scale.out_features:
            raise PreconditionError(
                "FiLM shape mismatch",
                {"x1": tuple(x1.shape), "x2": tuple(x2.shape), "expects": (self.scale.out_features, self.scale.in_features)},
            )
        return x1 * (self.scale(x2) + 1) + self.shift(x2)


def film(x1: Tensor, x2: Tensor, p: FiLM) -> Tensor:
    return p(x1, x2)


class PNA(nn.Module):
    """Linear(cat(max, min, mean, std)) over a masked set of vectors"""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.linear = nn.Linear(4 * d_in, d_out)

    def forward(self, x: Tensor, mask: Optional[Tensor] = None, allow_empty: bool = False) -> Tensor:
        # x: (..., S, d); mask: (..., S)
        if mask is None:
            mask = torch.ones(x.shape[:-1], dtype=torch.bool, device=x.device)
        count = mask.sum(dim=-1, keepdim=True)
        if not allow_empty and (count == 0).any():
            raise PreconditionError("PNA over an empty set")
        present = count > 0
        weights = mask.unsqueeze(-1).to(x.dtype)
        safe_count = count.clamp(min=1).to(x.dtype)

        mean = (x * weights).sum(dim=-2) / safe_count
        var = (((x - mean.unsqueeze(-2)) ** 2) * weights).sum(dim=-2) / safe_count
        positive = var > 0
        std = torch.where(positive, torch.sqrt(torch.where(positive, var, torch.ones_like(var))), torch.zeros_like(var))

        hidden = ~mask.unsqueeze(-1)
        maximum, argmax = x.masked_fill(hidden, -math.inf).max(dim=-2)
        minimum, argmin = x.masked_fill(hidden, math.inf).min(dim=-2)
        _note(argmax)
        _note(argmin)
        maximum = torch.where(present, maximum, torch.zeros_like(maximum))
        minimum = torch.where(present, minimum, torch.zeros_like(minimum))
        return self.linear(torch.cat([maximum, minimum, mean, std], dim=-1))


def pna(x: Tensor, p: PNA, mask: Optional[Tensor] = None) -> Tensor:
    return p(x, mask)


def _ffn(d: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d, 2 * d), ReLU(), nn.Linear(2 * d, d))


class SelfAttentionBlock(nn.Module):
    """One GraphEvo layer: node attention, triangle edge update, global exchange"""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dx, de, dy, heads = cfg.dx, cfg.de, cfg.dy, cfg.n_heads
        self.heads = heads
        self.literal_attention = cfg.literal_attention

        self.q = nn.Linear(dx, dx)
        self.k = nn.Linear(dx, dx)
        self.v = nn.Linear(dx, dx)
        self.edge_film = FiLM(de, heads)

        self.edge_mid = nn.Linear(heads, de)
        self.q_e = nn.Linear(de, de)
        self.k_e = nn.Linear(de, de)
        self.v_e = nn.Linear(de, de)
        self.bias_e = nn.Linear(de, heads)
        self.gate_e = nn.Linear(de, de)

        self.node_film_y = FiLM(dy, dx)
        self.edge_film_y = FiLM(dy, de)
        self.node_out = nn.Linear(dx, dx)
        self.edge_out = nn.Linear(de, de)

        self.y_in = nn.Linear(dy, dy)
        self.node_pna = PNA(dx, dy)
        self.edge_pna = PNA(de, dy)
        self.y_out = nn.Linear(dy, dy)

        self.dropout = nn.Dropout(cfg.dropout)
        self.norm_x1, self.norm_x2 = nn.LayerNorm(dx), nn.LayerNorm(dx)
        self.norm_e1, self.norm_e2 = nn.LayerNorm(de), nn.LayerNorm(de)
        self.norm_y1, self.norm_y2 = nn.LayerNorm(dy), nn.LayerNorm(dy)
        self.ffn_x, self.ffn_e, self.ffn_y = _ffn(dx), _ffn(de), _ffn(dy)

    def attend(self, X: Tensor, E: Tensor, y: Tensor, node_mask: Tensor):
        """Raw updates (X', E', y') before the residual wrapping"""
        B, N, dx = X.shape
        de = E.shape[-1]
        H = self.heads
        dh, dhe = dx // H, de // H
        xm = node_mask.to(X.dtype)

        Q = self.q(X).view(B, N, H, dh)
        K = self.k(X).view(B, N, H, dh)
        V = self.v(X).view(B, N, H, dh)
        scores = torch.einsum("bihd,bjhd->bijh", Q, K) / math.sqrt(dh)
        scores = self.edge_film(scores, E)

        if self.literal_attention:
            attention = scores * xm[:, None, :, None]
        else:
            hidden = ~node_mask[:, None, :, None]
            attention = torch.softmax(scores.masked_fill(hidden, -math.inf), dim=2)
        X_new = torch.einsum("bijh,bjhd->bihd", attention, V).reshape(B, N, dx)

        # triangle update: S[i, j] = sum_k <Q_e[i, k], K_e[k, j]> / sqrt(d) + b[i, j]
        mid = self.edge_mid(scores)
        Q_e = self.q_e(mid).view(B, N, N, H, dhe) * xm[:, None, :, None, None]
        K_e = self.k_e(mid).view(B, N, N, H, dhe)
        V_e = self.v_e(mid).view(B, N, N, H, dhe)
        S = torch.einsum("bikhd,bkjhd->bijh", Q_e, K_e) / math.sqrt(dhe) + self.bias_e(mid)
        E_new = (S.unsqueeze(-1) * V_e).reshape(B, N, N, de) * torch.sigmoid(self.gate_e(mid))

        X_new = self.node_out(self.node_film_y(X_new, y[:, None, :]))
        E_new = self.edge_out(self.edge_film_y(E_new, y[:, None, None, :]))

        edge_mask = pair_mask(node_mask, include_diagonal=False)
        y_new = self.y_out(
            self.y_in(y)
            + self.node_pna(X_new, node_mask)
            + self.edge_pna(E_new.reshape(B, N * N, de), edge_mask.reshape(B, N * N), allow_empty=True)
        )
        return X_new, E_new, y_new

    def forward(self, X: Tensor, E: Tensor, y: Tensor, node_mask: Tensor):
        X_new, E_new, y_new = self.attend(X, E, y, node_mask)

        X = self.norm_x1(X + self.dropout(X_new))
        E = self.norm_e1(E + self.dropout(E_new))
        y = self.norm_y1(y + self.dropout(y_new))

        X = self.norm_x2(X + self.dropout(self.ffn_x(X)))
        E = self.norm_e2(E + self.dropout(self.ffn_e(E)))
        y = self.norm_y2(y + self.dropout(self.ffn_y(y)))

        xm = node_mask.to(X.dtype)
        X = X * xm[..., None]
        E = E * pair_mask(node_mask).to(E.dtype)[..., None]
        return X, E, y


def self_attention_block(X: Tensor, E: Tensor, y: Tensor, p: SelfAttentionBlock, mask: Tensor):
    return p(X, E, y, mask)


def pair_mask(node_mask: Tensor, include_diagonal: bool = True) -> Tensor:
    mask = node_mask[:, :, None] & node_mask[:, None, :]
    if not include_diagonal:
        n = node_mask.shape[1]
        mask = mask & ~torch.eye(n, dtype=torch.bool, device=node_mask.device)
    return mask


@dataclass
class GraphBatch:
    """Padded network input for a list of graphs"""

    node_onehot: Tensor  # (B, N, n)
    edge_onehot: Tensor  # (B, N, N, m)
    node_features: Tensor  # (B, N, F)
    global_features: Tensor  # (B, G)
    node_mask: Tensor  # (B, N) bool
    source_node_onehot: Optional[Tensor] = None
    source_edge_onehot: Optional[Tensor] = None

    @property
    def n_graphs(self) -> int:
        return int(self.node_mask.shape[0])


@dataclass
class PosteriorLogits:
    """Factorized posterior logits; padded slots and the diagonal are zero"""

    node_logits: Tensor
    edge_logits: Tensor
    mask: Tensor

    def node_log_probs(self) -> Tensor:
        return torch.log_softmax(self.node_logits, dim=-1)

    def edge_log_probs(self) -> Tensor:
        return torch.log_softmax(self.edge_logits, dim=-1)

    def select(self, index: int, n_nodes: int) -> "PosteriorLogits":
        """Unpadded logits of one graph in the batch"""
        return PosteriorLogits(
            node_logits=self.node_logits[index, :n_nodes],
            edge_logits=self.edge_logits[index, :n_nodes, :n_nodes],
            mask=self.mask[index, :n_nodes],
        )


def _mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), ReLU(), nn.Linear(d_hidden, d_out))


class GraphEvo(nn.Module):
    """Maps a noisy graph and time to posterior logits over clean categories"""

    def __init__(
        self,
        n_node_types: int,
        n_edge_types: int,
        cfg: ModelConfig,
        valence_table: Optional[ValenceTable] = None,
    ):
        super().__init__()
        self.n_node_types = n_node_types
        self.n_edge_types = n_edge_types
        self.cfg = cfg
        self.valence_table = valence_table

        source = 1 if cfg.condition_on_source else 0
        node_in = n_node_types * (1 + source) + NODE_FEATURES
        edge_in = n_edge_types * (1 + source)
        global_in = COUNT_FEATURES + cfg.time_embedding_dim

        self.mlp_in_x = nn.Sequential(_mlp(node_in, cfg.dx, cfg.dx), ReLU())
        self.mlp_in_e = nn.Sequential(_mlp(edge_in, cfg.de, cfg.de), ReLU())
        self.mlp_in_y = nn.Sequential(_mlp(global_in, cfg.dy, cfg.dy), ReLU())
        self.blocks = nn.ModuleList([SelfAttentionBlock(cfg) for _ in range(cfg.n_layers)])
        self.mlp_out_x = _mlp(cfg.dx, cfg.dx, n_node_types)
        self.mlp_out_e = _mlp(cfg.de, cfg.de, n_edge_types)

        if cfg.float64:
            self.double()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def hyperparameters(self) -> dict:
        return {
            "n_node_types": self.n_node_types,
            "n_edge_types": self.n_edge_types,
            "model": self.cfg.model_dump(),
            "valence_table": self.valence_table.model_dump() if self.valence_table else None,
        }

    def collate(
        self,
        graphs: Sequence[Graph],
        times: Sequence[float],
        sources: Optional[Sequence[Graph]] = None,
        pad_to: Optional[int] = None,
    ) -> GraphBatch:
        if len(graphs) != len(times):
            raise PreconditionError("one time per graph is required")
        largest = max(g.n_nodes for g in graphs)
        if largest > settings.N_MAX:
            raise CapacityError("graph exceeds N_MAX", {"n_nodes": largest, "N_MAX": settings.N_MAX})
        N = max(largest, pad_to or 0)
        B = len(graphs)
        n, m = self.n_node_types, self.n_edge_types

        nodes = np.zeros((B, N, n))
        edges = np.zeros((B, N, N, m))
        node_features = np.zeros((B, N, NODE_FEATURES))
        global_features = np.zeros((B, COUNT_FEATURES + self.cfg.time_embedding_dim))
        mask = np.zeros((B, N), dtype=bool)
        for b, (g, t) in enumerate(zip(graphs, times)):
            g.validate_categories(n, m)
            k = g.n_nodes
            nodes[b, np.arange(k), g.node_types] = 1.0
            edges[b, :k, :k] = np.eye(m)[g.edge_types]
            features = structural_features(g, float(t), self.valence_table, self.cfg.time_embedding_dim)
            node_features[b, :k] = np.log1p(features.node_features)
            counts = features.global_features[:COUNT_FEATURES]
            global_features[b, :COUNT_FEATURES] = np.log1p(counts)
            global_features[b, COUNT_FEATURES:] = features.global_features[COUNT_FEATURES:]
            mask[b, :k] = True

        batch = GraphBatch(
            node_onehot=torch.as_tensor(nodes, dtype=self.dtype),
            edge_onehot=torch.as_tensor(edges, dtype=self.dtype),
            node_features=torch.as_tensor(node_features, dtype=self.dtype),
            global_features=torch.as_tensor(global_features, dtype=self.dtype),
            node_mask=torch.as_tensor(mask),
        )
        if self.cfg.condition_on_source:
            if sources is None:
                raise PreconditionError("model conditions on G0 but no sources were given")
            src_nodes = np.zeros((B, N, n))
            src_edges = np.zeros((B, N, N, m))
            for b, g0 in enumerate(sources):
                if g0.n_nodes != graphs[b].n_nodes:
                    raise PreconditionError("source and state sizes differ")
                k = g0.n_nodes
                src_nodes[b, np.arange(k), g0.node_types] = 1.0
                src_edges[b, :k, :k] = np.eye(m)[g0.edge_types]
            batch.source_node_onehot = torch.as_tensor(src_nodes, dtype=self.dtype)
            batch.source_edge_onehot = torch.as_tensor(src_edges, dtype=self.dtype)
        return batch

    def forward(self, batch: GraphBatch) -> PosteriorLogits:
        node_mask = batch.node_mask
        xm = node_mask.to(self.dtype)[..., None]
        full_pairs = pair_mask(node_mask).to(self.dtype)[..., None]

        node_in = [batch.node_onehot, batch.node_features]
        edge_in = [batch.edge_onehot]
        if self.cfg.condition_on_source:
            node_in.append(batch.source_node_onehot)
            edge_in.append(batch.source_edge_onehot)

        X = self.mlp_in_x(torch.cat(node_in, dim=-1)) * xm
        E = self.mlp_in_e(torch.cat(edge_in, dim=-1))
        E = (E + E.transpose(1, 2)) / 2 * full_pairs
        y = self.mlp_in_y(batch.global_features)

        for block in self.blocks:
            X, E, y = block(X, E, y, node_mask)

        node_logits = self.mlp_out_x(X) * xm
        edge_logits = self.mlp_out_e(E)
        edge_logits = (edge_logits + edge_logits.transpose(1, 2)) / 2
        edge_logits = edge_logits * pair_mask(node_mask, include_diagonal=False).to(self.dtype)[..., None]
        return PosteriorLogits(node_logits=node_logits, edge_logits=edge_logits, mask=node_mask)


def build_model(
    n_node_types: int,
    n_edge_types: int,
    cfg: ModelConfig,
    seed: int = 0,
    valence_table: Optional[ValenceTable] = None,
) -> GraphEvo:
    """Deterministically initialized model; the global torch RNG is left untouched"""
    with torch.random.fork_rng():
        torch.manual_seed(streams.torch_seed(seed, streams.INIT))
        model = GraphEvo(n_node_types, n_edge_types, cfg, valence_table)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Built GraphEvo: {cfg.n_layers} layers, {n_params} parameters")
    return model


def forward(
    model: GraphEvo, gt: Graph, t: float, conditioning: Optional[Graph] = None
) -> PosteriorLogits:
    """Posterior logits for a single graph, unpadded"""
    batch = model.collate([gt], [t], sources=[conditioning] if conditioning is not None else None)
    return model(batch).select(0, gt.n_nodes)
