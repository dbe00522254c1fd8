"""
Pydantic models for logs, reports and run manifests
"""

from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from flowgraph.models.config import MmdKernel


class LossReport(BaseModel):
    """One training step"""

    step: int
    total: float
    node_term: float
    edge_term: float
    pair_cost: Optional[float] = Field(None, description="Mean Hamming cost of the coupled pairs")


class RewardReport(BaseModel):
    """One fine-tuning iteration"""

    iteration: int
    mean_reward: float
    mean_kl: float = Field(..., description="Mean KL per dimension against the reference model")
    loss: float


class MetricReport(BaseModel):
    """Distributional comparison of a sample file against a reference file"""

    degree_mmd: float
    clustering_mmd: float
    orbit_mmd: float
    average: float = Field(..., description="Arithmetic mean of the three MMDs")
    uniqueness: float
    novelty: Optional[float] = None
    validity: Optional[float] = None
    n_samples: int
    n_reference: int
    kernels: Dict[str, MmdKernel]
    notes: List[str] = Field(default_factory=list)
    manifest_hash: Optional[str] = None


class TensorEntry(BaseModel):
    name: str
    shape: List[int]
    dtype: str
    values: List[float]


class CheckpointFile(BaseModel):
    """Serialized GraphEvo parameters"""

    format_version: int = Field(..., ge=1)
    hyperparameters: Dict[str, Any]
    tensors: List[TensorEntry]


class CheckResult(BaseModel):
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


class RunManifest(BaseModel):
    """Everything needed to reproduce a run"""

    command: str
    format_version: int
    seed: int
    config: Dict[str, Any]
    checkpoint_hash: Optional[str] = None
    outputs: List[str] = Field(default_factory=list)
    versions: Dict[str, str] = Field(default_factory=dict)
    system: Dict[str, Any] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.utcnow)
