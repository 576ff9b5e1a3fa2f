"""
Runtime settings for the simulation library
"""
import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

load_dotenv()


class SimulationSettings(BaseModel):
    """
    Runtime settings with environment variable support.

    Intent:
    Holds the knobs that change how an experiment is executed but never what
    it computes: how many worker threads run ensemble chunks, how large a
    vectorized chunk is, where results go by default and whether debug
    logging is on. Every value can come from the environment (or a `.env`
    file) so batch jobs can be tuned without editing experiment configs.

    Results are bit-identical for any worker count and chunk size; each
    trajectory owns its random generator and reductions run in index order.
    """

    workers: int = Field(default_factory=lambda: int(os.getenv("SSB_WORKERS", "1")))
    chunk_size: int = Field(default_factory=lambda: int(os.getenv("SSB_CHUNK_SIZE", "512")))
    output_dir: Path = Field(
        default_factory=lambda: Path(os.getenv("SSB_OUTPUT_DIR", "./results"))
    )
    debug: bool = Field(default_factory=lambda: os.getenv("DEBUG", "false").lower() == "true")

    model_config = ConfigDict(validate_assignment=True)

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        """
        Validate the worker count.

        Intent:
        Worker threads only help while numpy kernels release the GIL; more
        than a few hundred threads is a configuration mistake, not tuning.
        """
        if v < 1:
            raise ValueError("Worker count must be at least 1")
        if v > 256:
            raise ValueError("Worker count must not exceed 256")
        return v

    @field_validator("chunk_size")
    @classmethod
    def validate_chunk_size(cls, v: int) -> int:
        """
        Validate the number of trajectories integrated together.

        Small chunks waste time in Python overhead; huge chunks hold large
        noise blocks in memory at once.
        """
        if v < 1:
            raise ValueError("Chunk size must be at least 1")
        if v > 65536:
            raise ValueError("Chunk size must not exceed 65536")
        return v
