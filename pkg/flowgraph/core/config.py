"""
Application configuration settings
"""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings"""

    # App settings
    DEBUG: bool = Field(default=False, env="DEBUG")
    FORMAT_VERSION: int = Field(default=1, env="FORMAT_VERSION")

    # Reproducibility
    FLOWGRAPH_SEED: Optional[int] = Field(default=None, env="FLOWGRAPH_SEED")
    FLOWGRAPH_THREADS: Optional[int] = Field(default=None, ge=1, env="FLOWGRAPH_THREADS")

    # Capacity
    N_MAX: int = Field(default=64, ge=1, env="N_MAX")  # triangle attention is cubic in this

    # Artifact locations
    CHECKPOINT_DIR: str = Field(default="checkpoints", env="CHECKPOINT_DIR")
    OUTPUT_DIR: str = Field(default="runs", env="OUTPUT_DIR")

    # Logging settings
    LOG_LEVEL: str = Field(default="INFO", env="LOG_LEVEL")
    LOG_FILE: str = Field(default="flowgraph.log", env="LOG_FILE")

    class Config:
        env_file = ".env"
        case_sensitive = True


# Create global settings instance
settings = Settings()
