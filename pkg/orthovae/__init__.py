"""
orthovae: autoencoder variants built from first principles, and the tools to
measure how closely a trained decoder's local Jacobian aligns with its latent
axes.
"""

from orthovae.errors import (
    ConfigError,
    ConvergenceError,
    DegenerateMatrixError,
    DivergenceError,
    NotPositiveDefiniteError,
    RotationNotSupportedError,
    ShapeError,
)
from orthovae.experiment_config import ExperimentConfig
from orthovae.metrics import disentanglement_score, dto
from orthovae.models import Autoencoder, GaussianPosterior
from orthovae.nets import MlpNetwork

__version__ = "0.1.0"

__all__ = [
    "Autoencoder",
    "ConfigError",
    "ConvergenceError",
    "DegenerateMatrixError",
    "DivergenceError",
    "ExperimentConfig",
    "GaussianPosterior",
    "MlpNetwork",
    "NotPositiveDefiniteError",
    "RotationNotSupportedError",
    "ShapeError",
    "disentanglement_score",
    "dto",
]
