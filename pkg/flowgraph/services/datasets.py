"""
Dataset I/O and synthetic dataset generators
"""

import json
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np
from pydantic import ValidationError as PydanticValidationError

from flowgraph.core import rng as streams
from flowgraph.core.exceptions import ArtifactIOError, PreconditionError, RecordParseError
from flowgraph.models.graph import GraphRecord
from flowgraph.services.graphs import Graph

logger = logging.getLogger(__name__)

COMMUNITY_SIZES = (12, 14, 16, 18, 20)


def parse_graph_record(line: str, line_number: Optional[int] = None) -> Graph:
    """Decode one JSON Lines record; symmetry is reconstructed from the upper triangle"""
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"invalid JSON: {e.msg}", field="<record>", line_number=line_number)
    if not isinstance(payload, dict):
        raise RecordParseError("record must be a JSON object", field="<record>", line_number=line_number)

    try:
        record = GraphRecord.model_validate(payload)
    except PydanticValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "<record>"
        raise RecordParseError(error["msg"], field=field, line_number=line_number)

    edges = np.zeros((record.n, record.n), dtype=np.int64)
    for i, j, kind in record.edges:
        edges[i, j] = edges[j, i] = kind
    return Graph(np.asarray(record.nodes, dtype=np.int64), edges)


def serialize_graph_record(g: Graph) -> str:
    record = {
        "n": g.n_nodes,
        "nodes": g.node_types.tolist(),
        "edges": [[i, j, kind] for i, j, kind in g.upper_edges()],
    }
    return json.dumps(record, separators=(",", ":"))


def read_graphs(path) -> List[Graph]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as e:
        logger.error(f"Failed to read dataset {path}: {str(e)}")
        raise ArtifactIOError(f"cannot read dataset: {e.strerror}", {"path": str(path)})

    graphs = [
        parse_graph_record(line, line_number=idx + 1)
        for idx, line in enumerate(lines)
        if line.strip()
    ]
    logger.info(f"Loaded {len(graphs)} graphs from {path}")
    return graphs


def write_graphs(path, graphs: Iterable[Graph]) -> int:
    path = Path(path)
    count = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for g in graphs:
                handle.write(serialize_graph_record(g) + "\n")
                count += 1
    except OSError as e:
        logger.error(f"Failed to write dataset {path}: {str(e)}")
        raise ArtifactIOError(f"cannot write dataset: {e.strerror}", {"path": str(path)})
    return count


def gen_community_small(
    count: int,
    seed: int,
    p_intra: float = 0.7,
    inter_fraction: float = 0.05,
    sizes: Tuple[int, ...] = COMMUNITY_SIZES,
) -> List[Graph]:
    """Two equal Erdos-Renyi communities joined by ceil(inter_fraction * n) random cross edges"""
    if count <= 0:
        raise PreconditionError("count must be positive", {"count": count})

    graphs = []
    for index in range(count):
        rng = streams.stream(seed, streams.DATASET, 0, index)
        n = int(rng.choice(sizes))
        half = n // 2
        edges = np.zeros((n, n), dtype=np.int64)

        for offset in (0, half):
            block = rng.random((half, half)) < p_intra
            block = np.triu(block, k=1)
            edges[offset:offset + half, offset:offset + half] = block

        n_cross = math.ceil(inter_fraction * n)
        picks = rng.choice(half * half, size=min(n_cross, half * half), replace=False)
        for pick in picks.tolist():
            i, j = divmod(pick, half)
            edges[i, half + j] = 1

        edges = np.maximum(edges, edges.T)
        graphs.append(Graph(np.zeros(n, dtype=np.int64), edges))
    return graphs


def gen_grid(count: int, min_side: int, max_side: int, seed: int) -> List[Graph]:
    """r x c lattices with r, c uniform in [min_side, max_side]"""
    if not 2 <= min_side <= max_side:
        raise PreconditionError(
            "grid sides must satisfy 2 <= min_side <= max_side",
            {"min_side": min_side, "max_side": max_side},
        )
    graphs = []
    for index in range(count):
        rng = streams.stream(seed, streams.DATASET, 1, index)
        rows, cols = (int(v) for v in rng.integers(min_side, max_side + 1, size=2))
        lattice = nx.convert_node_labels_to_integers(nx.grid_2d_graph(rows, cols), ordering="sorted")
        graphs.append(Graph.from_networkx(lattice))
    return graphs


def split_dataset(graphs: List[Graph], test_fraction: float, seed: int) -> Tuple[List[Graph], List[Graph]]:
    """Shuffled train/test split"""
    if not 0.0 < test_fraction < 1.0:
        raise PreconditionError("test_fraction must be in (0, 1)", {"test_fraction": test_fraction})
    order = streams.stream(seed, streams.DATASET, 2).permutation(len(graphs))
    n_test = max(1, int(round(test_fraction * len(graphs))))
    test = [graphs[i] for i in order[:n_test]]
    train = [graphs[i] for i in order[n_test:]]
    return train, test
