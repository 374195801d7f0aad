"""
Configuration settings for the orthovae experiment package.

This module contains all configuration constants used throughout the package.
Centralizing configuration keeps numerical tolerances, training defaults and
experiment hyperparameters in one place, shared by operations and tests alike.
"""

from dataclasses import dataclass
from pathlib import Path

# ============================================================================
# Project Paths
# ============================================================================

# Project root directory
PROJECT_ROOT = Path(__file__).parent.parent

# Default output directory for experiment runs
RUNS_DIR = PROJECT_ROOT / "runs"

# Default directory for generated datasets
DATA_DIR = PROJECT_ROOT / "data"

# ============================================================================
# Numerical Tolerances
# ============================================================================


@dataclass(frozen=True)
class Tolerances:
    """
    Tolerances shared by the numerical kernels and the test-suite.

    Attributes:
        orthonormal: Max deviation of a Gram matrix from the identity
        svd_reconstruction: Max relative Frobenius error of U diag(s) V^T
        cholesky: Max absolute error of L L^T against the input
        symmetry: Max relative asymmetry accepted for SPD inputs
        rank: Relative singular value floor for full column rank
        degeneracy: Relative gap below which singular values count as repeated
        column_orthogonality: Off-diagonal floor (relative) for M^T M diagonal
        certification: Relative gap to the lower bound certifying optimality
        finite_difference_step: Central finite-difference step
    """

    orthonormal: float = 1e-9
    svd_reconstruction: float = 1e-8
    cholesky: float = 1e-10
    symmetry: float = 1e-10
    rank: float = 1e-12
    degeneracy: float = 1e-6
    column_orthogonality: float = 1e-6
    certification: float = 1e-7
    finite_difference_step: float = 1e-5


TOL = Tolerances()

# ============================================================================
# SVD Settings
# ============================================================================

# Maximum number of one-sided Jacobi sweeps before reporting failure
JACOBI_MAX_SWEEPS = 100

# Off-diagonal convergence threshold (relative to the column norms)
JACOBI_TOLERANCE = 1e-12

# ============================================================================
# Network Settings
# ============================================================================

# Supported activations (nonlinearities only in hidden layers)
ACTIVATIONS = ("linear", "tanh", "relu")

# Mini-batch size
BATCH_SIZE = 64

# Adam hyperparameters
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

# AdaGrad stabilizer
ADAGRAD_EPSILON = 1e-8

# Supported optimizers
OPTIMIZERS = ("adam", "adagrad")

# Checkpoint file format version
CHECKPOINT_FORMAT_VERSION = 1

# ============================================================================
# Model Settings
# ============================================================================

# Supported autoencoder variants
MODEL_KINDS = ("ae", "vae", "beta_vae", "beta_vae_full")

# Loss reduction convention, recorded in every metrics report
LOSS_REDUCTION = "reconstruction summed over output coordinates, averaged over batch"

# ============================================================================
# Metric Settings
# ============================================================================

# k for the kNN regressor/classifier of the disentanglement score
KNN_NEIGHBORS = 5

# Train/evaluate split of the test data inside the disentanglement score
DISENTANGLEMENT_TRAIN_FRACTION = 0.8

# Latent coordinate counts as active when std(mu_j) exceeds this
ACTIVE_STD_THRESHOLD = 0.5

# Relative KL error below which training counts as polarized
POLARIZED_THRESHOLD = 0.03

# Slack for the polarized-regime conditions (passive mean/variance,
# active variance, passive decoder sensitivity)
POLARIZED_REGIME_TOLERANCE = 0.1

# Number of test points whose decoder Jacobian enters the DtO
DTO_SAMPLE_COUNT = 256

# Minimum share of usable (full-rank) Jacobians for a trustworthy DtO
DTO_MIN_USABLE_FRACTION = 0.95

# Largest latent dimension for the exact signed permutation search
PERMUTATION_MAX_DIM = 12

# Largest dimension accepted by the brute-force enumeration oracle
BRUTE_FORCE_MAX_DIM = 5

# ============================================================================
# Data Settings
# ============================================================================

# Samples per synthetic dataset
DEFAULT_SAMPLE_COUNT = 50000

# Train / evaluation / test fractions
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

# Stretch factor applied to the first generating factor (linear task)
LINEAR_STRETCH = 2.0

# Index of the stretched factor
STRETCH_AXIS = 0

# Rotation applied after the trivial embedding into R^3
ROTATION_AXIS = (1.0, -1.0, 1.0)
ROTATION_ANGLE_DEGREES = 45.0

# Nonlinear generator: R^2 -> hidden(10, tanh) -> R^6
NONLINEAR_HIDDEN_WIDTH = 10
NONLINEAR_OUTPUT_DIM = 6

# Ratios of the degenerate-scale study
DEGENERACY_RATIOS = (1.0, 1.2, 1.5)

# ============================================================================
# Training Settings
# ============================================================================

# Loss trace cadence in batches
EVAL_EVERY_BATCHES = 500

# Seeds per configuration
DEFAULT_SEED_COUNT = 10

# Epoch budgets of the DtO/disentanglement correlation study
CORRELATION_EPOCH_BUDGETS = (50, 200, 600)

# ============================================================================
# Theory Settings
# ============================================================================

# Initial step of the backtracking local improvement
IMPROVEMENT_INITIAL_DELTA = 0.1

# Backtracking gives up below this step
IMPROVEMENT_MIN_DELTA = 1e-14

# Step cap for one improvement run
IMPROVEMENT_MAX_STEPS = 20000

# ============================================================================
# CLI Settings
# ============================================================================

EXIT_SUCCESS = 0
EXIT_FAILED_CHECK = 1
EXIT_BAD_CONFIG = 2

# ============================================================================
# Display Settings
# ============================================================================

# Decimal places for metric display
METRIC_PRECISION = 2

# Log line format used by the command line entry point
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
