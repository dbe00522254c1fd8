"""
Pydantic models for run configuration
"""

from enum import Enum
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class CouplingMode(str, Enum):
    """How noise graphs are paired with data graphs"""

    INDEPENDENT = "independent"
    OT = "ot"


class QMode(str, Enum):
    """Reference distribution of the conditional path"""

    PRIOR = "prior"
    POINT_MASS = "point_mass"


class KernelKind(str, Enum):
    GAUSSIAN_EMD = "gaussian_emd"
    GAUSSIAN = "gaussian"
    GAUSSIAN_TV = "gaussian_tv"


class StrictModel(BaseModel):
    """Base for user-facing configs: unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid")


class ValenceTable(StrictModel):
    """Maximum summed bond order per node category, plus optional node weights"""

    max_valence: Dict[int, int] = Field(..., description="Node category -> maximum bond-order sum")
    weights: Dict[int, float] = Field(default_factory=dict, description="Node category -> weight")

    @field_validator("max_valence")
    @classmethod
    def non_negative(cls, value: Dict[int, int]) -> Dict[int, int]:
        if any(v < 0 for v in value.values()):
            raise ValueError("max valences must be non-negative")
        return value


class ModelConfig(StrictModel):
    """GraphEvo hyperparameters"""

    n_layers: int = Field(4, ge=1, description="Number of self-attention blocks")
    n_heads: int = Field(8, ge=1)
    dx: int = Field(64, ge=1, description="Node width")
    de: int = Field(32, ge=1, description="Edge width")
    dy: int = Field(32, ge=1, description="Global width")
    dropout: float = Field(0.1, ge=0.0, lt=1.0)
    time_embedding_dim: int = Field(16, ge=2)
    literal_attention: bool = Field(False, description="Skip the node-attention softmax")
    condition_on_source: bool = Field(False, description="Feed G0 one-hot encodings to the network")
    float64: bool = Field(False, description="Run the network in 64-bit arithmetic")

    @model_validator(mode="after")
    def heads_divide_widths(self) -> "ModelConfig":
        if self.dx % self.n_heads or self.de % self.n_heads:
            raise ValueError("dx and de must be divisible by n_heads")
        if self.time_embedding_dim % 2:
            raise ValueError("time_embedding_dim must be even")
        return self


class TrainConfig(StrictModel):
    """Training loop parameters"""

    batch_size: int = Field(32, ge=1)
    steps: int = Field(1000, ge=0)
    learning_rate: float = Field(2e-4, ge=0.0)
    edge_loss_weight: float = Field(5.0, gt=0.0)
    coupling_mode: CouplingMode = CouplingMode.OT
    hamming_lambda: float = Field(1.0, ge=0.0, description="Edge weight of the Hamming cost")
    q_mode: QMode = QMode.POINT_MASS
    seed: Optional[int] = None
    checkpoint_interval: int = Field(0, ge=0, description="0 writes only the final checkpoint")
    grad_clip_norm: float = Field(1.0, gt=0.0)
    log_interval: int = Field(100, ge=1)


class SampleConfig(StrictModel):
    """Sampler parameters"""

    n_steps: int = Field(100, ge=1)
    n_samples: int = Field(100, ge=1)
    seed: Optional[int] = None
    q_mode: QMode = QMode.POINT_MASS
    record_trajectory: bool = False
    chunk_size: int = Field(16, ge=1, description="Chains advanced together in one network call")


class RLConfig(StrictModel):
    """Goal-guided fine-tuning parameters"""

    alpha: float = Field(0.999, ge=0.0, description="Reward weight")
    beta: float = Field(0.001, ge=0.0, description="KL weight")
    temperature: float = Field(1.0, gt=0.0)
    literal_temperature: bool = False
    n_train: int = Field(100, ge=0, description="Fine-tuning iterations")
    trajectories: int = Field(8, ge=1, description="Trajectories per iteration")
    n_steps: int = Field(50, ge=1)
    seed: Optional[int] = None
    learning_rate: float = Field(1e-5, ge=0.0)
    grad_clip_norm: float = Field(1.0, gt=0.0)
    min_grad_norm: float = Field(1e-6, ge=0.0, description="Skip the update when the gradient norm is at most this")
    kl_ceiling: float = Field(10.0, gt=0.0, description="Abort when mean KL per dimension exceeds this")
    include_final_step: bool = True
    intermediate_reward_weight: float = Field(0.0, ge=0.0)
    q_mode: QMode = QMode.POINT_MASS


class RewardSpec(StrictModel):
    """Named built-in reward with its parameters"""

    name: str
    params: Dict[str, float] = Field(default_factory=dict)
    valence_table: Optional[ValenceTable] = None


class MmdKernel(StrictModel):
    kind: KernelKind
    sigma: float = Field(..., gt=0.0)


class MetricsConfig(StrictModel):
    """Kernels and options of the evaluation report"""

    degree_kernel: MmdKernel = MmdKernel(kind=KernelKind.GAUSSIAN_EMD, sigma=1.0)
    clustering_kernel: MmdKernel = MmdKernel(kind=KernelKind.GAUSSIAN_EMD, sigma=0.1)
    orbit_kernel: MmdKernel = MmdKernel(kind=KernelKind.GAUSSIAN, sigma=30.0)
    clustering_bins: int = Field(100, ge=1)
    exact_isomorphism_max_nodes: int = Field(16, ge=1)
    valence_table: Optional[ValenceTable] = None


class DatasetConfig(StrictModel):
    """Synthetic dataset generation"""

    kind: str = Field("community-small", pattern="^(community-small|grid)$")
    count: int = Field(100, ge=1)
    seed: Optional[int] = None
    min_side: int = Field(10, ge=2)
    max_side: int = Field(20, ge=2)
    p_intra: float = Field(0.7, ge=0.0, le=1.0)
    test_fraction: Optional[float] = Field(None, gt=0.0, lt=1.0)


class RunConfig(StrictModel):
    """Everything a command may read from a config file"""

    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sample: SampleConfig = SampleConfig()
    rl: RLConfig = RLConfig()
    reward: Optional[RewardSpec] = None
    metrics: MetricsConfig = MetricsConfig()
    valence_table: Optional[ValenceTable] = None
    threads: Optional[int] = Field(None, ge=1)

    data: Optional[str] = Field(None, description="Training dataset (JSON Lines)")
    prior: Optional[str] = Field(None, description="Prior file; built from data when absent")
    checkpoint: Optional[str] = None
    output: Optional[str] = None
    samples: Optional[str] = None
    reference: Optional[str] = None
    training_set: Optional[str] = Field(None, description="Training graphs for the novelty metric")
