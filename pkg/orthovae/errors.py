"""
Exception types for the orthovae package.

Invalid inputs derive from ValueError and failed computations from
RuntimeError, so callers can keep catching the built-in families.
"""

from typing import Any, Dict, List, Optional

import numpy as np


class ShapeError(ValueError):
    """Array shapes do not chain or do not match the expected layout."""


class NotPositiveDefiniteError(ValueError):
    """A covariance (or its Cholesky factor) is not positive definite."""


class DegenerateMatrixError(ValueError):
    """A matrix lacks full column rank where the operation requires it."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or cannot be read."""


class RotationNotSupportedError(ValueError):
    """The posterior family is not closed under the requested rotation."""


class ConvergenceError(RuntimeError):
    """An iterative kernel hit its iteration cap without converging."""


class DivergenceError(RuntimeError):
    """
    Training produced a non-finite loss or gradient.

    Attributes:
        step: Optimizer step at which the failure was detected
        diagnostics: Free-form details (which tensor, norms, ...)
        last_good_parameters: Parameter snapshot to restore, if known
    """

    def __init__(
        self,
        message: str,
        step: int = 0,
        diagnostics: Optional[Dict[str, Any]] = None,
        last_good_parameters: Optional[List[np.ndarray]] = None,
    ):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}
        self.last_good_parameters = last_good_parameters
