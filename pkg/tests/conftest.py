"""
Shared fixtures for the orthovae test-suite.
"""

import numpy as np
import pytest

from orthovae.experiment_config import DatasetSpec, ExperimentConfig


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    """Small linear beta-VAE configuration that trains in well under a second."""
    return ExperimentConfig(
        name="tiny",
        dataset=DatasetSpec(kind="linear", seed=3, sample_count=200),
        model_kind="beta_vae",
        hidden_sizes=[],
        activation="linear",
        latent_dim=2,
        beta=1e-3,
        reference_beta=1e-3,
        learning_rate=1e-2,
        epochs=2,
        batch_size=32,
        seeds=[0, 1],
        eval_every=2,
        dto_samples=16,
    )
