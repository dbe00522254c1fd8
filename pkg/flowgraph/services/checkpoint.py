"""
Checkpoint persistence for GraphEvo parameters
"""

import hashlib
import json
import logging
from pathlib import Path

import torch
from pydantic import ValidationError as PydanticValidationError

from flowgraph.core.config import settings
from flowgraph.core.exceptions import ArtifactIOError, ValidationError
from flowgraph.models.config import ModelConfig, ValenceTable
from flowgraph.models.report import CheckpointFile, TensorEntry
from flowgraph.services.graphevo import GraphEvo

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _dtype_name(dtype: torch.dtype) -> str:
    return str(dtype).replace("torch.", "")


def save_checkpoint(model: GraphEvo, path) -> Path:
    """Write every state tensor with its shape and dtype; values round-trip exactly"""
    path = Path(path)
    tensors = [
        TensorEntry(
            name=name,
            shape=list(tensor.shape),
            dtype=_dtype_name(tensor.dtype),
            values=tensor.detach().reshape(-1).tolist(),
        )
        for name, tensor in model.state_dict().items()
    ]
    payload = CheckpointFile(
        format_version=settings.FORMAT_VERSION,
        hyperparameters=model.hyperparameters(),
        tensors=tensors,
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(payload.model_dump_json(), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {str(e)}")
        raise ArtifactIOError(f"cannot write checkpoint: {e.strerror}", {"path": str(path)})
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path) -> GraphEvo:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to read checkpoint {path}: {str(e)}")
        raise ArtifactIOError(f"cannot read checkpoint: {e.strerror}", {"path": str(path)})
    try:
        payload = CheckpointFile.model_validate(json.loads(raw))
        hyper = payload.hyperparameters
        cfg = ModelConfig.model_validate(hyper["model"])
        table = hyper.get("valence_table")
        model = GraphEvo(
            int(hyper["n_node_types"]),
            int(hyper["n_edge_types"]),
            cfg,
            ValenceTable.model_validate(table) if table else None,
        )
    except (json.JSONDecodeError, KeyError, PydanticValidationError) as e:
        raise ValidationError(f"malformed checkpoint: {str(e)}", {"path": str(path)})

    state = {}
    for entry in payload.tensors:
        if entry.dtype not in DTYPES:
            raise ValidationError("unsupported tensor dtype", {"name": entry.name, "dtype": entry.dtype})
        state[entry.name] = torch.tensor(entry.values, dtype=DTYPES[entry.dtype]).reshape(entry.shape)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise ValidationError(f"checkpoint does not match its hyperparameters: {str(e)}", {"path": str(path)})
    return model


def checkpoint_hash(path) -> str:
    """sha256 of the checkpoint file"""
    digest = hashlib.sha256()
    try:
        with Path(path).open("rb") as handle:
            for block in iter(lambda: handle.read(1 << 20), b""):
                digest.update(block)
    except OSError as e:
        raise ArtifactIOError(f"cannot hash checkpoint: {e.strerror}", {"path": str(path)})
    return digest.hexdigest()
