"""
Theory Module for orthovae.

This module makes the alignment argument for Gaussian-posterior autoencoders
executable. Around each sample the decoder is replaced by its Jacobian J_i and
the stochastic reconstruction loss becomes E|J_i eps|^2 = sum_j |c_j|^2 sigma_j^2,
c_j being the columns of J_i (after a latent rotation V_i). Spending a fixed
precision budget sum -log sigma^2 = C across samples and coordinates, the
objective sum_i log E|J_i eps|^2 is bounded below by

    N log d - C / d + (2 / d) sum_i log psdet(J_i)

and the bound is attained exactly when every rotated Jacobian has orthogonal
columns and balanced contributions. The module provides the closed-form
optimum, local improvement steps that never increase the objective, the
worked two-column examples, lemma verifiers and a PCA baseline.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from orthovae.config import (
    IMPROVEMENT_INITIAL_DELTA,
    IMPROVEMENT_MAX_STEPS,
    IMPROVEMENT_MIN_DELTA,
    TOL,
)
from orthovae.errors import DegenerateMatrixError, ShapeError
from orthovae.linalg import (
    has_repeated_singular_values,
    log_psdet,
    planar_rotation,
    psdet,
    random_orthogonal,
    rotation_2d,
    svd,
    symmetric_eigh,
)
from orthovae.utils import as_matrix, as_vector, make_rng

logger = logging.getLogger(__name__)

AXES_YES = "yes"
AXES_NO = "no"
AXES_DEGENERATE = "degenerate"


# ============================================================================
# Column Quantities
# ============================================================================

def column_norms(j: np.ndarray) -> np.ndarray:
    """Euclidean norms of the columns of j."""
    return np.linalg.norm(as_matrix(j, "J"), axis=0)


def column_norm_product(j: np.ndarray) -> float:
    """
    Product of the column norms, col(J).

    Never smaller than psdet(J); equal exactly when the columns are orthogonal.

    Example:
        >>> round(column_norm_product(example_decoders()["M1"]) ** 2, 9)
        150.0
    """
    return float(np.prod(column_norms(j)))


def expected_stochastic_loss(j: np.ndarray, variances: np.ndarray) -> float:
    """
    E|J eps|^2 for eps ~ N(0, diag(variances)): sum_j |c_j|^2 sigma_j^2.

    Args:
        j: Jacobian of shape (n, d)
        variances: Per-coordinate variances sigma_j^2 > 0

    Returns:
        Expected squared norm of the linearized decoder noise

    Example:
        >>> expected_stochastic_loss(example_decoders()["M1"], np.array([1.0, 1.0]))
        53.0
    """
    j = as_matrix(j, "J")
    variances = as_vector(variances, j.shape[1], "variances")
    if np.any(variances <= 0):
        raise ValueError("variances must be strictly positive")
    return float(np.sum(column_norms(j) ** 2 * variances))


def optimal_sigmas(j: np.ndarray, budget: float) -> Tuple[np.ndarray, float]:
    """
    Variances minimizing E|J eps|^2 subject to sum -log sigma_j^2 = budget.

    The optimum balances every term, |c_j|^2 sigma_j^2 = t, so
    sigma_j^2 = t / |c_j|^2 and the minimum is d * (prod_j |c_j|^2 e^-budget)^(1/d).

    Args:
        j: Jacobian of shape (n, d)
        budget: Total precision budget C

    Returns:
        Tuple of (variances, minimum value)

    Raises:
        DegenerateMatrixError: If a column of j is zero
    """
    sq_norms = column_norms(j) ** 2
    if np.any(sq_norms == 0.0):
        raise DegenerateMatrixError(
            "A zero column makes the optimal precision allocation unbounded"
        )
    d = sq_norms.size
    log_t = (np.sum(np.log(sq_norms)) - budget) / d
    variances = np.exp(log_t - np.log(sq_norms))
    return variances, float(d * math.exp(log_t))


def orthogonalizing_rotation(j: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Rotation V (d x d) such that J V^T has pairwise orthogonal columns.

    V is the transposed right singular factor of J, so J V^T = U diag(s).

    Args:
        j: Jacobian with full column rank

    Returns:
        Tuple of (V, degenerate). degenerate is True when two singular values
        coincide, in which case V is not unique.
    """
    j = as_matrix(j, "J")
    factors = svd(j)
    if factors.sigma[-1] <= TOL.rank * factors.sigma[0]:
        raise DegenerateMatrixError("Jacobian does not have full column rank")
    degenerate = has_repeated_singular_values(factors.sigma)
    if degenerate:
        logger.warning("Repeated singular values: orthogonalizing rotation is not unique")
    return factors.v.T.copy(), degenerate


def orthogonality_residual(m: np.ndarray) -> float:
    """Largest normalized inner product |<c_i, c_j>| / (|c_i| |c_j|), i != j."""
    m = as_matrix(m)
    gram = m.T @ m
    norms = np.sqrt(np.diag(gram))
    scale = np.outer(norms, norms)
    scale[scale == 0.0] = 1.0
    off = np.abs(gram / scale)
    np.fill_diagonal(off, 0.0)
    return float(np.max(off)) if off.size > 1 else 0.0


def axes_preserving_check(m: np.ndarray, tol: float = TOL.column_orthogonality) -> str:
    """
    Classify a linear map as axes-preserving.

    Args:
        m: Matrix of shape (n, d)
        tol: Off-diagonal tolerance of M^T M relative to the diagonal scale

    Returns:
        "degenerate" if two singular values coincide (axes not pinned down),
        "yes" if the columns are pairwise orthogonal, "no" otherwise
    """
    m = as_matrix(m)
    if has_repeated_singular_values(svd(m).sigma):
        return AXES_DEGENERATE
    return AXES_YES if orthogonality_residual(m) <= tol else AXES_NO


# ============================================================================
# Isolated Optimization Problem
# ============================================================================

@dataclass
class IsolatedProblem:
    """
    Per-sample Jacobians with a shared precision budget.

    Attributes:
        jacobians: One (n, d) full-column-rank matrix per sample
        budget: C in the constraint sum_i sum_j -log sigma_ij^2 = C
    """

    jacobians: List[np.ndarray]
    budget: float = 0.0
    log_psdets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.jacobians:
            raise ValueError("A problem needs at least one Jacobian")
        self.jacobians = [as_matrix(j, "J") for j in self.jacobians]
        dims = {j.shape[1] for j in self.jacobians}
        if len(dims) != 1:
            raise ShapeError(f"All Jacobians need the same latent width, got {sorted(dims)}")
        if not math.isfinite(self.budget):
            raise ValueError("budget must be finite")
        self.log_psdets = np.array([log_psdet(j) for j in self.jacobians])

    @property
    def sample_count(self) -> int:
        return len(self.jacobians)

    @property
    def latent_dim(self) -> int:
        return self.jacobians[0].shape[1]

    @classmethod
    def random(
        cls,
        sample_count: int,
        output_dim: int,
        latent_dim: int,
        budget: float = 0.0,
        rng: Union[int, np.random.Generator, None] = None,
    ) -> "IsolatedProblem":
        """Problem with standard-normal Jacobians."""
        if output_dim < latent_dim:
            raise ShapeError("output_dim must be >= latent_dim")
        gen = make_rng(rng)
        jacobians = [gen.standard_normal((output_dim, latent_dim)) for _ in range(sample_count)]
        return cls(jacobians, budget)


@dataclass
class Assignment:
    """
    Variances and latent rotations, one row / matrix per sample.

    Attributes:
        variances: Array (N, d) of sigma_ij^2
        rotations: N orthogonal d x d matrices V_i
    """

    variances: np.ndarray
    rotations: List[np.ndarray]

    def copy(self) -> "Assignment":
        return Assignment(self.variances.copy(), [v.copy() for v in self.rotations])

    def budget(self) -> float:
        return float(-np.sum(np.log(self.variances)))


def _rotated_sq_norms(problem: IsolatedProblem, assignment: Assignment, i: int) -> np.ndarray:
    rotated = problem.jacobians[i] @ assignment.rotations[i].T
    return np.sum(rotated * rotated, axis=0)


def _sample_objective(sq_norms: np.ndarray, variances: np.ndarray) -> float:
    return float(math.log(np.sum(sq_norms * variances)))


def problem_objective(problem: IsolatedProblem, assignment: Assignment) -> float:
    """sum_i log sum_j |(J_i V_i^T) e_j|^2 sigma_ij^2."""
    return float(
        sum(
            _sample_objective(_rotated_sq_norms(problem, assignment, i), assignment.variances[i])
            for i in range(problem.sample_count)
        )
    )


def global_lower_bound(problem: IsolatedProblem) -> float:
    """
    Closed-form lower bound of problem_objective over all feasible assignments.

    Example:
        >>> global_lower_bound(IsolatedProblem([np.eye(3)], budget=0.0)) == math.log(3)
        True
    """
    n, d = problem.sample_count, problem.latent_dim
    return float(n * math.log(d) - problem.budget / d + (2.0 / d) * np.sum(problem.log_psdets))


def random_assignment(
    problem: IsolatedProblem,
    rng: Union[int, np.random.Generator, None] = None,
    spread: float = 1.0,
) -> Assignment:
    """Feasible random start: Haar rotations and log-normal variances meeting the budget."""
    gen = make_rng(rng)
    n, d = problem.sample_count, problem.latent_dim
    log_var = spread * gen.standard_normal((n, d))
    log_var -= (np.sum(log_var) + problem.budget) / (n * d)
    rotations = [random_orthogonal(d, gen) for _ in range(n)]
    return Assignment(np.exp(log_var), rotations)


def closed_form_optimum(problem: IsolatedProblem) -> Assignment:
    """
    Assignment attaining the lower bound.

    Each V_i orthogonalizes J_i, the budget is split evenly over samples and
    each sample's variances balance its column contributions.
    """
    n = problem.sample_count
    per_sample = problem.budget / n
    variances = []
    rotations = []
    for j in problem.jacobians:
        v, _ = orthogonalizing_rotation(j)
        sigmas, _ = optimal_sigmas(j @ v.T, per_sample)
        rotations.append(v)
        variances.append(sigmas)
    return Assignment(np.array(variances), rotations)


def _slack_terms(problem: IsolatedProblem, assignment: Assignment) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample AM-GM and Hadamard contributions to objective - bound."""
    d = problem.latent_dim
    amgm = np.zeros(problem.sample_count)
    hadamard = np.zeros(problem.sample_count)
    for i in range(problem.sample_count):
        sq = _rotated_sq_norms(problem, assignment, i)
        terms = np.log(sq * assignment.variances[i])
        amgm[i] = math.log(np.mean(np.exp(terms))) - np.mean(terms)
        hadamard[i] = (np.sum(np.log(sq)) - 2.0 * problem.log_psdets[i]) / d
    return np.maximum(amgm, 0.0), np.maximum(hadamard, 0.0)


# ============================================================================
# Local Improvement
# ============================================================================

@dataclass
class ImprovementResult:
    """
    Outcome of one local improvement step.

    Attributes:
        status: "improved", "optimal" or "stalled"
        assignment: Assignment after the step
        objective: Objective after the step
        move: "amgm", "hadamard" or "" when nothing was applied
    """

    status: str
    assignment: Assignment
    objective: float
    move: str = ""


def _balanced_variances(sq_norms: np.ndarray, variances: np.ndarray) -> np.ndarray:
    budget = -float(np.sum(np.log(variances)))
    balanced, _ = optimal_sigmas(np.diag(np.sqrt(sq_norms)), budget)
    return balanced


def _amgm_move(problem, assignment, i) -> Optional[Assignment]:
    sq = _rotated_sq_norms(problem, assignment, i)
    var = assignment.variances[i]
    current = _sample_objective(sq, var)
    terms = sq * var
    high, low = int(np.argmax(terms)), int(np.argmin(terms))
    if high == low or terms[high] <= terms[low]:
        return None
    delta = IMPROVEMENT_INITIAL_DELTA
    while delta >= IMPROVEMENT_MIN_DELTA:
        trial = var.copy()
        trial[high] /= 1.0 + delta
        trial[low] *= 1.0 + delta
        if _sample_objective(sq, trial) < current:
            updated = assignment.copy()
            updated.variances[i] = trial
            return updated
        delta /= 2.0
    return None


def _hadamard_move(problem, assignment, i) -> Optional[Assignment]:
    d = problem.latent_dim
    rotated = problem.jacobians[i] @ assignment.rotations[i].T
    gram = rotated.T @ rotated
    norms = np.sqrt(np.diag(gram))
    cosines = np.abs(gram / np.outer(norms, norms))
    np.fill_diagonal(cosines, 0.0)
    p, q = np.unravel_index(int(np.argmax(cosines)), cosines.shape)
    if cosines[p, q] == 0.0:
        return None
    current = _sample_objective(np.diag(gram), assignment.variances[i])
    delta = IMPROVEMENT_INITIAL_DELTA
    while delta >= IMPROVEMENT_MIN_DELTA:
        for angle in (delta, -delta):
            v_new = planar_rotation(d, int(p), int(q), angle) @ assignment.rotations[i]
            trial = problem.jacobians[i] @ v_new.T
            sq = np.sum(trial * trial, axis=0)
            var = _balanced_variances(sq, assignment.variances[i])
            if _sample_objective(sq, var) < current:
                updated = assignment.copy()
                updated.rotations[i] = v_new
                updated.variances[i] = var
                return updated
        delta /= 2.0
    return None


def _is_certified(objective: float, bound: float, tolerance: float = TOL.certification) -> bool:
    return objective - bound <= tolerance * max(1.0, abs(bound))


def local_improvement_step(
    assignment: Assignment,
    problem: IsolatedProblem,
    tolerance: float = TOL.certification,
) -> ImprovementResult:
    """
    Apply one objective-decreasing local move, or certify optimality.

    The gap to the lower bound splits into per-sample AM-GM slack (unbalanced
    contributions) and Hadamard slack (non-orthogonal columns). The sample and
    move with the largest slack is tried first:

    - AM-GM: the largest contribution is divided and the smallest multiplied
      by (1 + delta), which keeps the budget.
    - Hadamard: a planar rotation by +-delta in the plane of the most
      non-orthogonal column pair, followed by rebalancing that sample's
      variances within its own budget.

    delta starts at IMPROVEMENT_INITIAL_DELTA and is halved until the
    objective strictly decreases.

    Args:
        assignment: Feasible assignment (not modified)
        problem: Isolated problem
        tolerance: Relative gap to the bound accepted as optimal

    Returns:
        ImprovementResult with status "improved", "optimal" (within
        tolerance of the bound) or "stalled"
    """
    objective = problem_objective(problem, assignment)
    if _is_certified(objective, global_lower_bound(problem), tolerance):
        return ImprovementResult("optimal", assignment, objective)

    amgm, hadamard = _slack_terms(problem, assignment)
    candidates = [(amgm[i], "amgm", i) for i in range(problem.sample_count)]
    candidates += [(hadamard[i], "hadamard", i) for i in range(problem.sample_count)]
    candidates.sort(key=lambda c: -c[0])

    for slack, move, i in candidates:
        if slack <= 0.0:
            break
        step = _amgm_move if move == "amgm" else _hadamard_move
        updated = step(problem, assignment, i)
        if updated is not None:
            return ImprovementResult("improved", updated, problem_objective(problem, updated), move)

    return ImprovementResult("stalled", assignment, objective)


# ============================================================================
# Certificates
# ============================================================================

@dataclass
class OptimumCertificate:
    """
    Achieved objective of an assignment next to the global lower bound.

    Attributes:
        variances: Per-sample per-coordinate sigma^2
        rotations: Per-sample V_i
        achieved_objective: problem_objective at the assignment
        lower_bound: global_lower_bound of the problem
        orthogonality_residuals: Per-sample normalized off-diagonal of J_i V_i^T
        certified: Gap within the certification tolerance
        steps: Improvement steps that produced the assignment
    """

    variances: np.ndarray
    rotations: List[np.ndarray]
    achieved_objective: float
    lower_bound: float
    orthogonality_residuals: List[float]
    certified: bool
    steps: int = 0

    @property
    def gap(self) -> float:
        return self.achieved_objective - self.lower_bound

    @property
    def relative_gap(self) -> float:
        return self.gap / max(1.0, abs(self.lower_bound))

    def to_dict(self) -> Dict:
        """JSON-serializable record of the certificate."""
        return {
            "objective": self.achieved_objective,
            "lower_bound": self.lower_bound,
            "relative_gap": self.relative_gap,
            "certified": self.certified,
            "steps": self.steps,
            "sigmas": self.variances.tolist(),
            "orthogonality_residuals": list(self.orthogonality_residuals),
        }


def certify(problem: IsolatedProblem, assignment: Assignment, steps: int = 0) -> OptimumCertificate:
    """Compare an assignment with the lower bound and record residuals."""
    objective = problem_objective(problem, assignment)
    bound = global_lower_bound(problem)
    residuals = [
        orthogonality_residual(j @ v.T) for j, v in zip(problem.jacobians, assignment.rotations)
    ]
    return OptimumCertificate(
        variances=assignment.variances.copy(),
        rotations=[v.copy() for v in assignment.rotations],
        achieved_objective=objective,
        lower_bound=bound,
        orthogonality_residuals=residuals,
        certified=_is_certified(objective, bound),
        steps=steps,
    )


def improve_to_optimum(
    problem: IsolatedProblem,
    start: Optional[Assignment] = None,
    max_steps: int = IMPROVEMENT_MAX_STEPS,
    rng: Union[int, np.random.Generator, None] = None,
    tolerance: float = TOL.certification,
) -> OptimumCertificate:
    """
    Iterate local_improvement_step until optimal, stalled or max_steps.

    Args:
        problem: Isolated problem
        start: Feasible start (random if None)
        max_steps: Step cap
        rng: Seed for the random start
        tolerance: Relative gap at which to stop; 0 runs until no move
            decreases the objective

    Returns:
        Certificate of the final assignment
    """
    current = start.copy() if start is not None else random_assignment(problem, rng)
    steps = 0
    status = "improved"
    while steps < max_steps:
        result = local_improvement_step(current, problem, tolerance)
        if result.status != "improved":
            status = result.status
            break
        current = result.assignment
        steps += 1
    certificate = certify(problem, current, steps)
    logger.debug(
        f"Local improvement stopped ({status}) after {steps} steps, "
        f"relative gap {certificate.relative_gap:.3e}"
    )
    return certificate


# ============================================================================
# Lemma Verifiers
# ============================================================================

def amgm_gap(values: Sequence[float]) -> float:
    """
    Arithmetic minus geometric mean of non-negative values (always >= 0).

    Example:
        >>> amgm_gap([2.0, 2.0, 2.0])
        0.0
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0 or np.any(arr < 0):
        raise ValueError("amgm_gap needs a non-empty vector of non-negative values")
    if np.any(arr == 0.0):
        return float(np.mean(arr))
    if np.all(arr == arr[0]):
        return 0.0
    return float(np.mean(arr) - math.exp(np.mean(np.log(arr))))


def hadamard_gap(m: np.ndarray) -> float:
    """col(M) - |det M| for a square matrix (always >= 0)."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"hadamard_gap needs a square matrix, got {m.shape}")
    return column_norm_product(m) - abs(float(np.linalg.det(m)))


def column_orthogonality_equivalence(m: np.ndarray, tol: float = TOL.column_orthogonality) -> Dict[str, bool]:
    """
    Evaluate three equivalent conditions on M = U S V^T.

    Returns:
        Dictionary with "columns_orthogonal" (pairwise), "gram_diagonal"
        (M^T M diagonal) and "scaled_vt_orthogonal" (columns of S V^T)
    """
    m = as_matrix(m)
    gram = m.T @ m
    scale = max(float(np.max(np.abs(np.diag(gram)))), np.finfo(np.float64).tiny)
    off = gram - np.diag(np.diag(gram))
    factors = svd(m)
    scaled_vt = factors.sigma[:, None] * factors.v.T
    return {
        "columns_orthogonal": orthogonality_residual(m) <= tol,
        "gram_diagonal": bool(np.max(np.abs(off)) <= tol * scale),
        "scaled_vt_orthogonal": orthogonality_residual(scaled_vt) <= tol,
    }


def volume_bound_gap(m: np.ndarray, v: np.ndarray) -> float:
    """col(M V^T) - psdet(M); zero only for an orthogonalizing V."""
    return column_norm_product(as_matrix(m) @ as_matrix(v).T) - psdet(m)


def example_decoders() -> Dict[str, np.ndarray]:
    """
    The two-latent linear decoders used as worked examples.

    M1 has column norms^2 50 and 3 (non-orthogonal columns); M2 = M1 R^T with R
    the rotation by 45 degrees, giving column norms^2 61/2 and 45/2.
    """
    m1 = np.array([[4.0, 1.0], [-3.0, 1.0], [5.0, -1.0]])
    m2 = m1 @ rotation_2d(math.pi / 4).T
    return {"M1": m1, "M2": m2}


# ============================================================================
# PCA Baseline
# ============================================================================

@dataclass
class PcaModel:
    """
    Linear encoder P (d x n rows = principal directions) with decoder P^T.

    Attributes:
        components: Matrix (d, n), eigenvalue-descending rows
        mean: Data mean used for centering
        eigenvalues: All covariance eigenvalues, descending
        degenerate: True if the retained subspace is not unique
    """

    components: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool = False

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def decode(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean

    def reconstruction_error(self, x: np.ndarray) -> float:
        """Mean over samples of the summed squared reconstruction error."""
        x = np.asarray(x, dtype=np.float64)
        return float(np.mean(np.sum((x - self.decode(self.encode(x))) ** 2, axis=1)))


def pca_fit(data: np.ndarray, latent_dim: int) -> PcaModel:
    """
    Fit PCA with `latent_dim` components.

    Args:
        data: Samples of shape (N, n)
        latent_dim: Number of components d <= n

    Returns:
        PcaModel; degenerate is set when eigenvalue d and d+1 (or any two of
        the first d) coincide, since the directions are then not unique
    """
    data = as_matrix(data, "data")
    n = data.shape[1]
    if not 1 <= latent_dim <= n:
        raise ValueError(f"latent_dim must be in [1, {n}], got {latent_dim}")
    mean = data.mean(axis=0)
    centered = data - mean
    covariance = centered.T @ centered / data.shape[0]
    eigenvalues, eigenvectors = symmetric_eigh(covariance)
    head = eigenvalues[: min(latent_dim + 1, n)]
    degenerate = has_repeated_singular_values(head)
    if degenerate:
        logger.warning("PCA spectrum has repeated eigenvalues: principal directions are not unique")
    return PcaModel(
        components=eigenvectors[:, :latent_dim].T.copy(),
        mean=mean,
        eigenvalues=eigenvalues,
        degenerate=degenerate,
    )


def pca_objective(data: np.ndarray, p: np.ndarray) -> float:
    """Mean of |x - P^T P x|^2 over centered samples for an encoder P (d x n)."""
    data = as_matrix(data, "data")
    p = as_matrix(p, "P")
    centered = data - data.mean(axis=0)
    recon = centered @ p.T @ p
    return float(np.mean(np.sum((centered - recon) ** 2, axis=1)))
