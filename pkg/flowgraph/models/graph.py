"""
Pydantic models for graph records and prior files
"""

from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class GraphRecord(BaseModel):
    """One line of a dataset file"""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(..., ge=1, description="Number of nodes")
    nodes: List[int] = Field(..., description="Node category per node")
    edges: List[List[int]] = Field(
        default_factory=list, description="Present edges as [i, j, type] with i < j and type >= 1"
    )

    @field_validator("nodes")
    @classmethod
    def non_negative_nodes(cls, value: List[int]) -> List[int]:
        if any(v < 0 for v in value):
            raise ValueError("node categories must be non-negative")
        return value

    @field_validator("edges")
    @classmethod
    def well_formed_edges(cls, value: List[List[int]]) -> List[List[int]]:
        seen = set()
        for edge in value:
            if len(edge) != 3:
                raise ValueError("each edge must be [i, j, type]")
            i, j, kind = edge
            if kind < 1:
                raise ValueError("edge type must be >= 1; absent edges are omitted")
            if i >= j:
                raise ValueError(f"edge [{i}, {j}] must list the smaller endpoint first")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge [{i}, {j}]")
            seen.add((i, j))
        return value

    @model_validator(mode="after")
    def consistent_sizes(self) -> "GraphRecord":
        if len(self.nodes) != self.n:
            raise ValueError(f"nodes has {len(self.nodes)} entries but n={self.n}")
        for i, j, _ in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge endpoint out of range: [{i}, {j}]")
        return self


class PriorFile(BaseModel):
    """Serialized product-of-categoricals prior"""

    model_config = ConfigDict(extra="forbid")

    format_version: int = Field(..., ge=1)
    node_marginal: List[float] = Field(..., min_length=1)
    edge_marginal: List[float] = Field(..., min_length=2)
    size_distribution: List[float] = Field(..., min_length=2, description="Probability of each node count, indexed by count")
