"""
Experiment Configuration Module for orthovae.

Experiments are described by a validated ExperimentConfig persisted as JSON.
The presets carry the training settings of the two synthetic tasks.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from orthovae.config import (
    BATCH_SIZE,
    DEFAULT_SAMPLE_COUNT,
    DEFAULT_SEED_COUNT,
    DTO_SAMPLE_COUNT,
    EVAL_EVERY_BATCHES,
    LINEAR_STRETCH,
    SPLIT_FRACTIONS,
)
from orthovae.errors import ConfigError
from orthovae.utils import ensure_directory_exists

logger = logging.getLogger(__name__)

# Settings of the synthetic tasks
SYNTH_LINEAR_BETA = 1e-4
SYNTH_NONLINEAR_BETA = 1e-3
SYNTH_LEARNING_RATE = 1e-3
SYNTH_EPOCHS = 600
SYNTH_LATENT_DIM = 2
SYNTH_NONLINEAR_HIDDEN = (60, 40, 20)


class DatasetSpec(BaseModel):
    """Which synthetic dataset to generate and how to split it."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["linear", "nonlinear"] = "linear"
    seed: int = 0
    ratio: float = Field(LINEAR_STRETCH, gt=0)
    sample_count: int = Field(DEFAULT_SAMPLE_COUNT, ge=10)
    split_fractions: Tuple[float, float, float] = SPLIT_FRACTIONS
    split_seed: int = 0

    @field_validator("split_fractions")
    @classmethod
    def _fractions_sum_to_one(cls, value):
        if any(f < 0 for f in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {value}")
        return value


class ExperimentConfig(BaseModel):
    """
    Complete description of one experiment.

    Attributes:
        name: Run name, used as directory under the output root
        dataset: Dataset specification
        model_kind: "ae", "vae", "beta_vae" or "beta_vae_full"
        hidden_sizes: Encoder hidden widths (decoder mirrors them)
        activation: Hidden activation
        latent_dim: Latent width
        beta: KL weight
        reference_beta: Reference beta, marked in sweep outputs
        optimizer: "adam" or "adagrad"
        learning_rate: Optimizer step size
        epochs: Passes over the training split (0 keeps the initialization)
        batch_size: Mini-batch size
        seeds: Training seeds
        eval_every: Loss-trace cadence in batches
        dto_samples: Test points entering the DtO
    """

    model_config = ConfigDict(extra="forbid")

    name: str = Field(min_length=1)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    model_kind: Literal["ae", "vae", "beta_vae", "beta_vae_full"] = "beta_vae"
    hidden_sizes: List[int] = Field(default_factory=list)
    activation: Literal["linear", "tanh", "relu"] = "linear"
    latent_dim: int = Field(SYNTH_LATENT_DIM, ge=1)
    beta: float = Field(SYNTH_LINEAR_BETA, ge=0)
    reference_beta: Optional[float] = Field(None, ge=0)
    optimizer: Literal["adam", "adagrad"] = "adam"
    learning_rate: float = Field(SYNTH_LEARNING_RATE, gt=0)
    epochs: int = Field(SYNTH_EPOCHS, ge=0)
    batch_size: int = Field(BATCH_SIZE, ge=1)
    seeds: List[int] = Field(default_factory=lambda: list(range(DEFAULT_SEED_COUNT)))
    eval_every: int = Field(EVAL_EVERY_BATCHES, ge=1)
    dto_samples: int = Field(DTO_SAMPLE_COUNT, ge=1)

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_widths(cls, value):
        if any(w < 1 for w in value):
            raise ValueError(f"hidden widths must be >= 1, got {value}")
        return value

    @field_validator("seeds")
    @classmethod
    def _distinct_seeds(cls, value):
        if not value:
            raise ValueError("at least one seed is required")
        if len(set(value)) != len(value):
            raise ValueError(f"seeds must be distinct, got {value}")
        return value

    @model_validator(mode="after")
    def _name_is_a_path_component(self):
        if "/" in self.name or "\\" in self.name:
            raise ValueError(f"name must not contain path separators, got '{self.name}'")
        return self

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def save(self, path: Union[str, Path]) -> Path:
        """Write the configuration as indented JSON."""
        path = Path(path)
        ensure_directory_exists(path.parent)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """
        Validate a dictionary.

        Raises:
            ConfigError: If validation fails
        """
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid experiment configuration: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """
        Read and validate a JSON configuration file.

        Raises:
            ConfigError: If the file is missing, not JSON or invalid
        """
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"Configuration file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Configuration file {path} is not valid JSON: {e}") from e
        config = cls.from_dict(data)
        logger.info(f"Loaded configuration '{config.name}' from {path}")
        return config

    def with_overrides(self, **updates: Any) -> "ExperimentConfig":
        """Copy with top-level fields replaced, validated again."""
        data = self.model_dump()
        data.update({k: v for k, v in updates.items() if v is not None})
        return ExperimentConfig.from_dict(data)


def synth_linear_config(
    model_kind: str = "beta_vae",
    name: Optional[str] = None,
    ratio: float = LINEAR_STRETCH,
    latent_dim: int = SYNTH_LATENT_DIM,
) -> ExperimentConfig:
    """Linear encoder/decoder on the linear task, beta 1e-4, Adam 1e-3, 600 epochs."""
    return ExperimentConfig(
        name=name or f"synth_lin_{model_kind}",
        dataset=DatasetSpec(kind="linear", ratio=ratio),
        model_kind=model_kind,
        hidden_sizes=[],
        activation="linear",
        latent_dim=latent_dim,
        beta=SYNTH_LINEAR_BETA,
        reference_beta=SYNTH_LINEAR_BETA,
    )


def synth_nonlinear_config(
    model_kind: str = "beta_vae",
    name: Optional[str] = None,
    latent_dim: int = SYNTH_LATENT_DIM,
) -> ExperimentConfig:
    """60-40-20 tanh encoder and decoder on the nonlinear task, beta 1e-3."""
    return ExperimentConfig(
        name=name or f"synth_nonlin_{model_kind}",
        dataset=DatasetSpec(kind="nonlinear"),
        model_kind=model_kind,
        hidden_sizes=list(SYNTH_NONLINEAR_HIDDEN),
        activation="tanh",
        latent_dim=latent_dim,
        beta=SYNTH_NONLINEAR_BETA,
        reference_beta=SYNTH_NONLINEAR_BETA,
    )


PRESETS = {
    "synth_linear": synth_linear_config,
    "synth_nonlinear": synth_nonlinear_config,
}
