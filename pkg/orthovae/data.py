"""
Synthetic Data Module for orthovae.

This module generates the two synthetic tasks with known generating factors:
- Linear: unit-square factors, one axis stretched, embedded into R^3 and
  rotated by 45 degrees about (1, -1, 1)
- Nonlinear: unit-square factors pushed through a randomly initialized
  2 -> 10 (tanh) -> 6 network with biases

It also provides degenerate-scale variants, seeded splits and CSV
persistence with a JSON sidecar describing how to regenerate the data.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from orthovae.config import (
    DEFAULT_SAMPLE_COUNT,
    DEGENERACY_RATIOS,
    LINEAR_STRETCH,
    NONLINEAR_HIDDEN_WIDTH,
    NONLINEAR_OUTPUT_DIM,
    ROTATION_ANGLE_DEGREES,
    ROTATION_AXIS,
    SPLIT_FRACTIONS,
    STRETCH_AXIS,
)
from orthovae.linalg import unit_vector
from orthovae.nets import MlpNetwork
from orthovae.utils import ensure_directory_exists, make_rng, read_json, write_json

logger = logging.getLogger(__name__)

DATASET_KINDS = ("linear", "nonlinear")
FACTOR_COUNT = 2


@dataclass
class SyntheticDataset:
    """
    Samples together with the factors that generated them.

    Attributes:
        inputs: Array (N, n) of observations
        factors: Array (N, F) of unit-square factors, before any stretch
        factor_kinds: "continuous" or "discrete" per factor
        generator_spec: kind, seed, ratio, sample_count and stretch axis
        generator: Generating network of the nonlinear task
    """

    inputs: np.ndarray
    factors: np.ndarray
    factor_kinds: List[str] = field(default_factory=lambda: ["continuous"] * FACTOR_COUNT)
    generator_spec: Dict[str, Any] = field(default_factory=dict)
    generator: Optional[MlpNetwork] = None

    def __post_init__(self):
        if len(self.inputs) != len(self.factors):
            raise ValueError("inputs and factors must have the same number of rows")

    @property
    def sample_count(self) -> int:
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: Sequence[int]) -> "SyntheticDataset":
        """Rows selected by indices, sharing the generator description."""
        idx = np.asarray(indices, dtype=int)
        return SyntheticDataset(
            inputs=self.inputs[idx],
            factors=self.factors[idx],
            factor_kinds=list(self.factor_kinds),
            generator_spec=dict(self.generator_spec),
            generator=self.generator,
        )


# ============================================================================
# Linear Task
# ============================================================================

def rodrigues_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """
    Right-handed rotation by `angle` radians about `axis`.

    R = I + sin(angle) K + (1 - cos(angle)) K^2 with K the cross-product matrix
    of the normalized axis.

    Example:
        >>> r = rodrigues_rotation((0.0, 0.0, 1.0), math.pi / 2)
        >>> np.allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        True
    """
    kx, ky, kz = unit_vector(np.asarray(axis, dtype=np.float64))
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def linear_embedding_matrix(ratio: float = LINEAR_STRETCH) -> np.ndarray:
    """
    The 3x2 map of the linear task: rotate(embed(stretch(w))).

    Its columns are orthogonal with norms `ratio` (stretched factor) and 1.
    """
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    stretch = np.eye(FACTOR_COUNT)
    stretch[STRETCH_AXIS, STRETCH_AXIS] = ratio
    embed = np.vstack([np.eye(FACTOR_COUNT), np.zeros((1, FACTOR_COUNT))])
    rotation = rodrigues_rotation(ROTATION_AXIS, math.radians(ROTATION_ANGLE_DEGREES))
    return rotation @ embed @ stretch


def _unit_square(gen: np.random.Generator, sample_count: int) -> np.ndarray:
    if sample_count < 1:
        raise ValueError(f"sample_count must be >= 1, got {sample_count}")
    return gen.uniform(0.0, 1.0, size=(sample_count, FACTOR_COUNT))


def generate_linear(
    seed: int,
    ratio: float = LINEAR_STRETCH,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
) -> SyntheticDataset:
    """
    Generate the linear task.

    Args:
        seed: Random seed
        ratio: Stretch of the first factor (1.0 gives a degenerate spectrum)
        sample_count: Number of samples N

    Returns:
        SyntheticDataset with inputs in R^3
    """
    matrix = linear_embedding_matrix(ratio)
    factors = _unit_square(make_rng(seed), sample_count)
    logger.info(f"Generated linear dataset: {sample_count} samples, ratio {ratio}, seed {seed}")
    return SyntheticDataset(
        inputs=factors @ matrix.T,
        factors=factors,
        generator_spec={
            "kind": "linear",
            "seed": seed,
            "ratio": ratio,
            "sample_count": sample_count,
            "stretch_axis": STRETCH_AXIS,
        },
    )


# ============================================================================
# Nonlinear Task
# ============================================================================

def build_nonlinear_generator(seed: Union[int, np.random.Generator]) -> MlpNetwork:
    """Random 2 -> 10 (tanh) -> 6 network with biases."""
    return MlpNetwork.build(
        [FACTOR_COUNT, NONLINEAR_HIDDEN_WIDTH, NONLINEAR_OUTPUT_DIM],
        hidden_activation="tanh",
        rng=seed,
        bias_init="uniform",
    )


def generate_nonlinear(seed: int, sample_count: int = DEFAULT_SAMPLE_COUNT) -> SyntheticDataset:
    """
    Generate the nonlinear task.

    The generator weights are drawn first from the seeded stream, then the
    factors, so the same seed always gives the same generator.
    """
    gen = make_rng(seed)
    generator = build_nonlinear_generator(gen)
    factors = _unit_square(gen, sample_count)
    logger.info(f"Generated nonlinear dataset: {sample_count} samples, seed {seed}")
    return SyntheticDataset(
        inputs=generator.forward(factors),
        factors=factors,
        generator_spec={"kind": "nonlinear", "seed": seed, "ratio": None, "sample_count": sample_count},
        generator=generator,
    )


def generate(
    kind: str,
    seed: int,
    ratio: float = LINEAR_STRETCH,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
) -> SyntheticDataset:
    """Dispatch to generate_linear or generate_nonlinear."""
    if kind == "linear":
        return generate_linear(seed, ratio, sample_count)
    if kind == "nonlinear":
        return generate_nonlinear(seed, sample_count)
    raise ValueError(f"Unknown dataset kind '{kind}', expected one of {DATASET_KINDS}")


def generator_jacobian(ds: SyntheticDataset, w: np.ndarray) -> np.ndarray:
    """Jacobian of the generating map at factor point(s) w."""
    kind = ds.generator_spec.get("kind")
    if kind == "linear":
        matrix = linear_embedding_matrix(ds.generator_spec["ratio"])
        w = np.asarray(w, dtype=np.float64)
        return matrix if w.ndim == 1 else np.broadcast_to(matrix, (len(w),) + matrix.shape).copy()
    if ds.generator is None:
        raise ValueError("Dataset carries no generator network")
    return ds.generator.jacobian(w)


def degenerate_ratio_datasets(
    seed: int,
    ratios: Sequence[float] = DEGENERACY_RATIOS,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
) -> Dict[float, SyntheticDataset]:
    """Linear datasets for each stretch ratio of the degenerate-scale study."""
    return {float(r): generate_linear(seed, r, sample_count) for r in ratios}


# ============================================================================
# Splits and Persistence
# ============================================================================

def split(
    ds: SyntheticDataset,
    fractions: Sequence[float] = SPLIT_FRACTIONS,
    seed: int = 0,
) -> Tuple[SyntheticDataset, SyntheticDataset, SyntheticDataset]:
    """
    Seeded random partition into train, evaluation and test parts.

    Args:
        ds: Dataset
        fractions: Three non-negative shares summing to 1
        seed: Partition seed

    Returns:
        Tuple of (train, eval, test); the test part takes the rounding rest
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative shares summing to 1, got {fractions}")
    order = make_rng(seed).permutation(ds.sample_count)
    n_train = int(round(fractions[0] * ds.sample_count))
    n_eval = int(round(fractions[1] * ds.sample_count))
    return (
        ds.subset(order[:n_train]),
        ds.subset(order[n_train:n_train + n_eval]),
        ds.subset(order[n_train + n_eval:]),
    )


def sidecar_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".json")


def save_dataset(ds: SyntheticDataset, path: Union[str, Path]) -> Path:
    """
    Write the dataset as CSV (w1, w2, x1..xn) plus a JSON sidecar.

    Values are written with 17 significant digits so reading them back is
    exact. The nonlinear generator is stored next to the CSV.
    """
    path = Path(path)
    ensure_directory_exists(path.parent)
    header = ",".join(
        [f"w{i + 1}" for i in range(ds.factors.shape[1])]
        + [f"x{i + 1}" for i in range(ds.input_dim)]
    )
    np.savetxt(path, np.hstack([ds.factors, ds.inputs]), fmt="%.17g", delimiter=",", header=header, comments="")

    sidecar = dict(ds.generator_spec)
    sidecar["factor_count"] = int(ds.factors.shape[1])
    sidecar["factor_kinds"] = list(ds.factor_kinds)
    if ds.generator is not None:
        checkpoint = path.with_suffix(".generator.npz")
        ds.generator.save_checkpoint(checkpoint)
        sidecar["mlp_checkpoint"] = checkpoint.name
    write_json(sidecar, sidecar_path(path))
    logger.info(f"Saved dataset ({ds.sample_count} rows) to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> SyntheticDataset:
    """Read a dataset written by save_dataset()."""
    path = Path(path)
    sidecar = read_json(sidecar_path(path))
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_factors = int(sidecar.pop("factor_count"))
    kinds = sidecar.pop("factor_kinds")
    generator = None
    if "mlp_checkpoint" in sidecar:
        generator = MlpNetwork.load_checkpoint(path.parent / sidecar["mlp_checkpoint"])
    return SyntheticDataset(
        inputs=table[:, n_factors:],
        factors=table[:, :n_factors],
        factor_kinds=list(kinds),
        generator_spec=sidecar,
        generator=generator,
    )
