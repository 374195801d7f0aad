"""
Metrics Module for orthovae.

This module implements the measurement instruments for trained models:
- Distance to Orthogonality (DtO) of decoder Jacobians, with an exact
  nearest-signed-permutation search
- A kNN-based disentanglement score for continuous and discrete factors
- The relative KL error of the polarized approximation and the fraction of
  training spent in the polarized regime
- Active-variable selection and the random-decoder baseline
"""

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import KDTree

from orthovae.config import (
    ACTIVE_STD_THRESHOLD,
    BRUTE_FORCE_MAX_DIM,
    DISENTANGLEMENT_TRAIN_FRACTION,
    DTO_MIN_USABLE_FRACTION,
    DTO_SAMPLE_COUNT,
    KNN_NEIGHBORS,
    LOSS_REDUCTION,
    PERMUTATION_MAX_DIM,
    POLARIZED_REGIME_TOLERANCE,
    POLARIZED_THRESHOLD,
    TOL,
)
from orthovae.linalg import svd
from orthovae.models import GaussianPosterior, kl_approx_polarized, kl_divergence
from orthovae.nets import MlpNetwork
from orthovae.utils import as_matrix, make_rng

logger = logging.getLogger(__name__)

# KL values at or below this are treated as zero
KL_FLOOR = 1e-12


# ============================================================================
# Signed Permutations
# ============================================================================

@dataclass(frozen=True)
class SignedPermutation:
    """
    Matrix with exactly one +-1 entry per row and column.

    Attributes:
        perm: perm[i] is the column of the nonzero entry of row i
        signs: Sign of that entry
    """

    perm: Tuple[int, ...]
    signs: Tuple[int, ...]

    def as_matrix(self) -> np.ndarray:
        d = len(self.perm)
        p = np.zeros((d, d))
        p[np.arange(d), list(self.perm)] = self.signs
        return p


def _l1_distance(v: np.ndarray, p: np.ndarray) -> float:
    return float(np.sum(np.abs(v - p)))


def nearest_signed_permutation(v: np.ndarray) -> Tuple[SignedPermutation, float]:
    """
    Signed permutation closest to v in the entrywise L1 sense.

    With the sign of every cell fixed to sign(v_ij), placing the entry at (i, j)
    changes the distance from sum |v| by c_ij = ||v_ij| - 1| - |v_ij|, so the
    search is an assignment problem on c, solved exactly.

    Args:
        v: Square matrix with d <= PERMUTATION_MAX_DIM

    Returns:
        Tuple of (SignedPermutation, L1 distance)

    Example:
        >>> p, dist = nearest_signed_permutation(np.diag([-1.0, 1.0]))
        >>> p.signs, dist
        ((-1, 1), 0.0)
    """
    v = as_matrix(v, "V")
    d = v.shape[0]
    if v.shape != (d, d):
        raise ValueError(f"V must be square, got {v.shape}")
    if d > PERMUTATION_MAX_DIM:
        raise ValueError(f"Exact search supports d <= {PERMUTATION_MAX_DIM}, got {d}")
    magnitude = np.abs(v)
    cost = np.abs(magnitude - 1.0) - magnitude
    rows, cols = linear_sum_assignment(cost)
    signs = np.where(v[rows, cols] < 0, -1, 1)
    perm = SignedPermutation(tuple(int(c) for c in cols), tuple(int(s) for s in signs))
    return perm, float(np.sum(magnitude) + np.sum(cost[rows, cols]))


def brute_force_signed_permutation(v: np.ndarray) -> Tuple[SignedPermutation, float]:
    """
    Enumerate all d! * 2^d signed permutations (d <= BRUTE_FORCE_MAX_DIM).

    Ties keep the first candidate in enumeration order.
    """
    v = as_matrix(v, "V")
    d = v.shape[0]
    if v.shape != (d, d) or d > BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"Enumeration needs a square matrix with d <= {BRUTE_FORCE_MAX_DIM}")
    best, best_dist = None, np.inf
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            candidate = SignedPermutation(perm, signs)
            dist = _l1_distance(v, candidate.as_matrix())
            if dist < best_dist:
                best, best_dist = candidate, dist
    return best, best_dist


def distance_to_signed_permutation(v: np.ndarray) -> float:
    """Frobenius distance between v and its L1-nearest signed permutation."""
    p, _ = nearest_signed_permutation(v)
    return float(np.linalg.norm(v - p.as_matrix()))


# ============================================================================
# Distance to Orthogonality
# ============================================================================

@dataclass
class DtoResult:
    """
    DtO over a set of latent points.

    Attributes:
        value: Mean Frobenius distance, None when every Jacobian was skipped
        used: Number of Jacobians that entered the mean
        skipped: Number of rank-deficient Jacobians
        degenerate: True when no Jacobian was usable
    """

    value: Optional[float]
    used: int
    skipped: int
    degenerate: bool = False

    @property
    def usable_fraction(self) -> float:
        total = self.used + self.skipped
        return self.used / total if total else 0.0


def dto_from_rotations(rotations: Sequence[np.ndarray]) -> float:
    """Mean of distance_to_signed_permutation over given right SVD factors."""
    if len(rotations) == 0:
        raise ValueError("dto_from_rotations needs at least one matrix")
    return float(np.mean([distance_to_signed_permutation(v) for v in rotations]))


def dto(
    decoder: MlpNetwork,
    latent_means: np.ndarray,
    active_set: Optional[Sequence[int]] = None,
    sample_count: int = DTO_SAMPLE_COUNT,
) -> DtoResult:
    """
    Distance to Orthogonality of a decoder at the given latent means.

    At each point the Jacobian is restricted to the active columns; its SVD
    J = U S V^T yields V, which is compared with its nearest signed
    permutation. Rank-deficient Jacobians are skipped and counted.

    Args:
        decoder: Decoder network
        latent_means: Array (N, d) of posterior means; the first
            `sample_count` rows are used
        active_set: Active latent coordinates (all if None)
        sample_count: Maximum number of points

    Returns:
        DtoResult
    """
    means = as_matrix(latent_means, "latent_means")[:sample_count]
    active = list(range(means.shape[1])) if active_set is None else list(active_set)
    if not active:
        logger.warning("No active latent variables: DtO is undefined")
        return DtoResult(value=None, used=0, skipped=len(means), degenerate=True)

    jacobians = decoder.jacobian(means)[:, :, active]
    distances = []
    skipped = 0
    for jac in jacobians:
        factors = svd(jac)
        if factors.sigma[0] == 0.0 or factors.sigma[-1] <= TOL.rank * factors.sigma[0]:
            skipped += 1
            continue
        distances.append(distance_to_signed_permutation(factors.v.T))

    if not distances:
        logger.warning("Every decoder Jacobian is rank deficient: DtO is degenerate")
        return DtoResult(value=None, used=0, skipped=skipped, degenerate=True)
    result = DtoResult(value=float(np.mean(distances)), used=len(distances), skipped=skipped)
    if result.usable_fraction < DTO_MIN_USABLE_FRACTION:
        logger.warning(
            f"Only {result.usable_fraction:.1%} of decoder Jacobians have full rank; "
            f"DtO rests on {result.used} points"
        )
    return result


def random_decoder_dto(
    template: MlpNetwork,
    latent_means: np.ndarray,
    active_set: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
) -> DtoResult:
    """DtO of a freshly initialized, untrained decoder with the template's architecture."""
    hidden = template.activations[0] if len(template.layers) > 1 else "linear"
    fresh = MlpNetwork.build(template.layer_sizes, hidden_activation=hidden, rng=seed)
    return dto(fresh, latent_means, active_set)


# ============================================================================
# Disentanglement Score
# ============================================================================

class KnnModel:
    """
    k-nearest-neighbour regressor/classifier on one latent coordinate.

    Classification takes the majority label among the k neighbours, ties going
    to the smallest label.

    Example:
        >>> knn = KnnModel(k=1).fit(np.array([0.0, 1.0]), np.array([3.0, 4.0]))
        >>> knn.predict(np.array([0.9]))
        array([4.])
    """

    def __init__(self, k: int = KNN_NEIGHBORS):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self._tree = None
        self._targets = None

    def fit(self, z: np.ndarray, targets: np.ndarray) -> "KnnModel":
        z = np.asarray(z, dtype=np.float64).reshape(len(z), -1)
        if len(z) < self.k:
            raise ValueError(f"Need at least k={self.k} training points, got {len(z)}")
        self._tree = KDTree(z)
        self._targets = np.asarray(targets)
        return self

    def _neighbours(self, query: np.ndarray) -> np.ndarray:
        if self._tree is None:
            raise RuntimeError("KnnModel.predict called before fit")
        query = np.asarray(query, dtype=np.float64).reshape(len(query), -1)
        _, idx = self._tree.query(query, k=self.k)
        return np.asarray(idx).reshape(len(query), self.k)

    def predict(self, query: np.ndarray, mode: str = "regress") -> np.ndarray:
        """
        Predict targets for query points.

        Args:
            query: Latent values
            mode: "regress" (neighbour mean) or "classify" (majority vote)
        """
        neighbour_targets = self._targets[self._neighbours(query)]
        if mode == "regress":
            return neighbour_targets.astype(np.float64).mean(axis=1)
        if mode == "classify":
            predictions = []
            for row in neighbour_targets:
                labels, counts = np.unique(row, return_counts=True)
                predictions.append(labels[int(np.argmax(counts))])
            return np.asarray(predictions)
        raise ValueError(f"Unknown kNN mode '{mode}'")


def knn_predict(
    train_z: np.ndarray,
    train_targets: np.ndarray,
    query: np.ndarray,
    mode: str = "regress",
    k: int = KNN_NEIGHBORS,
) -> np.ndarray:
    """Fit a KnnModel on (train_z, train_targets) and predict at query."""
    return KnnModel(k).fit(train_z, train_targets).predict(query, mode)


def _prediction_performance(
    train_z, train_w, eval_z, eval_w, kind: str, k: int
) -> float:
    if kind == "discrete":
        predictions = knn_predict(train_z, train_w, eval_z, "classify", k)
        return float(np.mean(predictions == eval_w))
    predictions = knn_predict(train_z, train_w, eval_z, "regress", k)
    mse = float(np.mean((predictions - eval_w) ** 2))
    return float(np.std(eval_w)) - float(np.sqrt(mse))


def _normalizer(eval_w: np.ndarray, kind: str) -> float:
    if kind == "discrete":
        _, counts = np.unique(eval_w, return_counts=True)
        return float(np.max(counts)) / len(eval_w)
    return float(np.std(eval_w))


def disentanglement_score(
    latents: np.ndarray,
    factors: np.ndarray,
    factor_kinds: Optional[Sequence[str]] = None,
    seed: Optional[int] = 0,
    k: int = KNN_NEIGHBORS,
    train_fraction: float = DISENTANGLEMENT_TRAIN_FRACTION,
) -> Optional[float]:
    """
    kNN prediction-gap disentanglement score in [0, 1].

    For every factor and every latent coordinate, a kNN model predicts the
    factor from that single coordinate. Performance is std(w) - sqrt(mse) for
    continuous factors and accuracy for discrete ones. The per-factor score is
    the gap between the best and second-best coordinate, normalized by std(w)
    (continuous) or the best constant accuracy (discrete), clamped to [0, 1],
    and the result is the mean over factors.

    Args:
        latents: Array (N, d) of latent codes
        factors: Array (N, F) of generating factors
        factor_kinds: "continuous" or "discrete" per factor (all continuous
            if None)
        seed: Seed of the train/evaluation split
        k: Neighbour count
        train_fraction: Share of rows used to fit the kNN models

    Returns:
        Score, or None when every factor is constant
    """
    latents = as_matrix(latents, "latents")
    factors = as_matrix(factors, "factors")
    if len(latents) != len(factors):
        raise ValueError("latents and factors must have the same number of rows")
    kinds = list(factor_kinds) if factor_kinds is not None else ["continuous"] * factors.shape[1]
    if len(kinds) != factors.shape[1]:
        raise ValueError("factor_kinds must name every factor")

    order = make_rng(seed).permutation(len(latents))
    cut = int(round(train_fraction * len(latents)))
    train_idx, eval_idx = order[:cut], order[cut:]

    gaps = []
    for i, kind in enumerate(kinds):
        w = factors[:, i]
        eval_w = w[eval_idx]
        scale = _normalizer(eval_w, kind)
        if np.var(w) == 0.0 or scale == 0.0:
            logger.warning(f"Factor {i} is constant and is excluded from the score")
            continue
        performance = np.array(
            [
                _prediction_performance(
                    latents[train_idx, j], w[train_idx], latents[eval_idx, j], eval_w, kind, k
                )
                for j in range(latents.shape[1])
            ]
        )
        ranked = np.sort(performance)[::-1]
        if len(ranked) > 1:
            runner_up = ranked[1]
        else:
            runner_up = _normalizer(eval_w, kind) if kind == "discrete" else 0.0
        gap = (ranked[0] - runner_up) / scale
        gaps.append(float(np.clip(gap, 0.0, 1.0)))

    if not gaps:
        logger.warning("All factors are constant: disentanglement score is undefined")
        return None
    return float(np.mean(gaps))


# ============================================================================
# Polarized Regime
# ============================================================================

def active_variables(latent_means: np.ndarray, threshold: float = ACTIVE_STD_THRESHOLD) -> List[int]:
    """
    Latent coordinates whose posterior mean varies across samples.

    Args:
        latent_means: Array (N, d) with N >= 2
        threshold: Standard-deviation threshold

    Returns:
        Sorted indices j with std(mu_j) > threshold
    """
    means = as_matrix(latent_means, "latent_means")
    if len(means) < 2:
        raise ValueError("active_variables needs at least two samples")
    return [int(j) for j in np.flatnonzero(np.std(means, axis=0) > threshold)]


def delta_kl_from_values(kl: float, kl_approx: float) -> Optional[float]:
    """|kl - kl_approx| / kl, or None when kl is zero."""
    if kl <= KL_FLOOR:
        return None
    return abs(kl - kl_approx) / kl


def delta_kl(post: GaussianPosterior, active_set: Optional[Sequence[int]] = None) -> Optional[float]:
    """
    Relative error of the polarized KL approximation on a batch.

    Args:
        post: Batch posterior
        active_set: Active coordinates (all if None)

    Returns:
        Relative error, or None when the batch KL is zero (undefined)
    """
    kl = float(np.mean(kl_divergence(post)))
    approx = float(np.mean(kl_approx_polarized(post, active_set)))
    return delta_kl_from_values(kl, approx)


def polarized_fraction(
    trace: Sequence[Tuple[int, Optional[float]]],
    threshold: float = POLARIZED_THRESHOLD,
    total_steps: Optional[int] = None,
) -> float:
    """
    Share of training after which delta_kl stays below threshold until the end.

    Args:
        trace: (step, delta_kl) pairs in step order; None values count as
            violations
        threshold: Relative KL error threshold
        total_steps: Training length (defaults to the last traced step)

    Returns:
        (T - step of the last violation) / T, or 1.0 if nothing violates
    """
    if not trace:
        raise ValueError("polarized_fraction needs a non-empty trace")
    total = trace[-1][0] if total_steps is None else total_steps
    violations = [step for step, value in trace if value is None or value >= threshold]
    if not violations:
        return 1.0
    if total <= 0:
        return 0.0
    return float(np.clip((total - violations[-1]) / total, 0.0, 1.0))


def check_polarized_regime(
    post: GaussianPosterior,
    decoder: MlpNetwork,
    active_set: Sequence[int],
    tolerance: float = POLARIZED_REGIME_TOLERANCE,
) -> Dict[str, Any]:
    """
    Measure the polarized-regime conditions on a batch.

    Passive coordinates should have mean ~0 and variance ~1 and be ignored by
    the decoder; active coordinates should have variance much below 1.

    Returns:
        Dictionary of measured magnitudes and boolean flags, including
        "polarized" when every condition holds
    """
    d = post.latent_dim
    active = sorted(set(active_set))
    passive = [j for j in range(d) if j not in active]
    mean = np.atleast_2d(post.mean)
    var = np.atleast_2d(post.variances())

    passive_mean = float(np.max(np.abs(mean[:, passive]))) if passive else 0.0
    passive_var = float(np.max(np.abs(var[:, passive] - 1.0))) if passive else 0.0
    active_var = float(np.max(var[:, active])) if active else 0.0
    if passive:
        columns = decoder.jacobian(mean)[:, :, passive]
        passive_sensitivity = float(np.max(np.linalg.norm(columns, axis=1)))
    else:
        passive_sensitivity = 0.0

    report = {
        "active_set": active,
        "passive_max_abs_mean": passive_mean,
        "passive_max_variance_deviation": passive_var,
        "active_max_variance": active_var,
        "passive_max_decoder_sensitivity": passive_sensitivity,
        "passive_ok": passive_mean <= tolerance and passive_var <= tolerance,
        "active_ok": active_var <= tolerance,
        "decoder_ignores_passive": passive_sensitivity <= tolerance,
    }
    report["polarized"] = report["passive_ok"] and report["active_ok"] and report["decoder_ignores_passive"]
    return report


# ============================================================================
# Reports
# ============================================================================

@dataclass
class MetricsReport:
    """
    Metrics of one trained seed.

    Attributes:
        seed: Training seed
        epochs: Epoch budget
        dto: DtO value (None if degenerate)
        dto_used: Jacobians used for DtO
        dto_skipped: Rank-deficient Jacobians skipped
        dto_degenerate: True when DtO is undefined
        disentanglement: Disentanglement score (None if undefined)
        delta_kl_trace: (step, delta_kl) pairs
        polarized_fraction: Share of training spent polarized
        active_set: Active latent coordinates
        random_decoder_dto: DtO of an untrained decoder, same architecture
        loss_reduction: How losses were reduced before weighting by beta
        failed: True if training diverged for this seed
        message: Failure or status message
    """

    seed: int
    epochs: int
    dto: Optional[float] = None
    dto_used: int = 0
    dto_skipped: int = 0
    dto_degenerate: bool = False
    disentanglement: Optional[float] = None
    delta_kl_trace: List[Tuple[int, Optional[float]]] = field(default_factory=list)
    polarized_fraction: Optional[float] = None
    active_set: List[int] = field(default_factory=list)
    random_decoder_dto: Optional[float] = None
    loss_reduction: str = LOSS_REDUCTION
    failed: bool = False
    message: str = ""

    @property
    def active_count(self) -> int:
        return len(self.active_set)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["delta_kl_trace"] = [[int(s), v] for s, v in self.delta_kl_trace]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        values = dict(data)
        values["delta_kl_trace"] = [(int(s), v) for s, v in values.get("delta_kl_trace", [])]
        return cls(**values)

    def summary_row(self) -> Dict[str, Any]:
        """Row of the run-level summary CSV."""
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "dto": self.dto,
            "disent": self.disentanglement,
            "polarized_fraction": self.polarized_fraction,
            "active_count": self.active_count,
        }


SUMMARY_FIELDS = ("seed", "epochs", "dto", "disent", "polarized_fraction", "active_count")
