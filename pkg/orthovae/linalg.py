"""
Dense Linear Algebra Module for orthovae.

This module implements the small dense kernels the rest of the package is
built on: a one-sided Jacobi SVD, pseudo-determinants, Cholesky factors,
symmetric eigendecompositions and generators of orthogonal matrices.

All functions are pure and reentrant. Matrices are plain float64 numpy arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from orthovae.config import JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE, TOL
from orthovae.errors import (
    ConvergenceError,
    DegenerateMatrixError,
    NotPositiveDefiniteError,
    ShapeError,
)
from orthovae.utils import as_matrix, as_vector, make_rng

logger = logging.getLogger(__name__)

Matrix = np.ndarray


@dataclass(frozen=True)
class SvdFactors:
    """
    Singular value decomposition m = u @ diag(sigma) @ v.T.

    Attributes:
        u: Left factor with orthonormal columns (thin: rows x min(rows, cols))
        sigma: Singular values, non-increasing
        v: Right factor with orthonormal columns (cols x min(rows, cols))
    """

    u: Matrix
    sigma: np.ndarray
    v: Matrix

    def reconstruct(self) -> Matrix:
        """Return u @ diag(sigma) @ v.T."""
        return (self.u * self.sigma) @ self.v.T


# ============================================================================
# Singular Value Decomposition
# ============================================================================

def svd(m: Matrix) -> SvdFactors:
    """
    Compute the SVD of a small dense matrix with one-sided Jacobi rotations.

    Columns of a working copy of m are rotated pairwise until all of them are
    mutually orthogonal; the accumulated rotations form V, the column norms are
    the singular values and the normalized columns form U. Wide matrices are
    handled through their transpose.

    Args:
        m: Finite matrix of shape (rows, cols)

    Returns:
        SvdFactors with thin U, descending sigma and V

    Raises:
        ConvergenceError: If the sweeps do not converge within JACOBI_MAX_SWEEPS

    Example:
        >>> f = svd(np.diag([3.0, 2.0]))
        >>> f.sigma
        array([3., 2.])
    """
    a = as_matrix(m)
    rows, cols = a.shape
    if rows < cols:
        t = svd(a.T)
        return SvdFactors(u=t.v, sigma=t.sigma, v=t.u)

    work = a.copy()
    v = np.eye(cols)

    for sweep in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = float(work[:, p] @ work[:, p])
                beta = float(work[:, q] @ work[:, q])
                gamma = float(work[:, p] @ work[:, q])
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOLERANCE * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                col_p = work[:, p].copy()
                work[:, p] = c * col_p - s * work[:, q]
                work[:, q] = s * col_p + c * work[:, q]
                v_p = v[:, p].copy()
                v[:, p] = c * v_p - s * v[:, q]
                v[:, q] = s * v_p + c * v[:, q]
        if not rotated:
            logger.debug(f"Jacobi SVD converged after {sweep + 1} sweeps")
            break
    else:
        raise ConvergenceError(
            f"One-sided Jacobi SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps "
            f"for a {rows}x{cols} matrix"
        )

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    floor = np.finfo(np.float64).eps * max(rows, cols) * (sigma[0] if sigma[0] > 0 else 1.0)
    nonzero = sigma > floor
    u = np.zeros((rows, cols))
    u[:, nonzero] = work[:, nonzero] / sigma[nonzero]
    if not np.all(nonzero):
        u[:, ~nonzero] = _orthonormal_complement(u[:, nonzero], int(np.sum(~nonzero)))
        sigma = np.where(nonzero, sigma, 0.0)

    return SvdFactors(u=u, sigma=sigma, v=v)


def _orthonormal_complement(basis: Matrix, count: int) -> Matrix:
    """Return `count` orthonormal columns orthogonal to the given basis."""
    rows, k = basis.shape
    q, _ = np.linalg.qr(np.hstack([basis, np.eye(rows)]))
    return q[:, k:k + count]


def singular_values(m: Matrix) -> np.ndarray:
    """Return the singular values of m in non-increasing order."""
    return svd(m).sigma


def has_repeated_singular_values(sigma: np.ndarray, rtol: float = TOL.degeneracy) -> bool:
    """
    Check whether two singular values coincide within a relative tolerance.

    Args:
        sigma: Singular values in non-increasing order
        rtol: Relative gap below which neighbours count as equal

    Returns:
        True if some adjacent pair is within rtol of each other
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size < 2:
        return False
    scale = np.maximum(np.abs(sigma[:-1]), np.finfo(np.float64).tiny)
    return bool(np.any(np.abs(sigma[:-1] - sigma[1:]) <= rtol * scale))


# ============================================================================
# Determinant-like Quantities
# ============================================================================

def _checked_singular_values(m: Matrix) -> np.ndarray:
    sigma = singular_values(m)
    if sigma[0] == 0.0 or sigma[-1] <= TOL.rank * sigma[0]:
        raise DegenerateMatrixError(
            f"Matrix is rank deficient: smallest singular value {sigma[-1]:.3e}, "
            f"largest {sigma[0]:.3e}"
        )
    return sigma


def psdet(m: Matrix) -> float:
    """
    Product of the singular values (the volume scale of the linear map).

    Args:
        m: Matrix with full column rank

    Returns:
        Strictly positive pseudo-determinant

    Raises:
        DegenerateMatrixError: If the smallest singular value is below
            TOL.rank times the largest

    Example:
        >>> psdet(np.diag([2.0, 5.0]))
        10.0
    """
    return float(np.prod(_checked_singular_values(m)))


def log_psdet(m: Matrix) -> float:
    """Logarithm of psdet(m), computed as a sum of logs."""
    return float(np.sum(np.log(_checked_singular_values(m))))


# ============================================================================
# Symmetric Matrices
# ============================================================================

def cholesky_factor(spd: Matrix) -> Matrix:
    """
    Lower-triangular Cholesky factor L with positive diagonal, L @ L.T = spd.

    Args:
        spd: Symmetric positive definite matrix

    Returns:
        Lower-triangular factor

    Raises:
        ShapeError: If the input is not square
        NotPositiveDefiniteError: If the input is not symmetric or not
            positive definite

    Example:
        >>> cholesky_factor(np.diag([4.0, 9.0]))
        array([[2., 0.],
               [0., 3.]])
    """
    s = as_matrix(spd, "spd")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"Cholesky needs a square matrix, got {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s))))
    if np.max(np.abs(s - s.T)) > TOL.symmetry * scale:
        raise NotPositiveDefiniteError("Covariance matrix is not symmetric")
    try:
        return np.linalg.cholesky(0.5 * (s + s.T))
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(
            f"Covariance matrix is not positive definite: {e}"
        ) from e


def symmetric_eigh(s: Matrix) -> Tuple[np.ndarray, Matrix]:
    """
    Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Args:
        s: Symmetric matrix

    Returns:
        Tuple of (eigenvalues, eigenvectors as columns)
    """
    s = as_matrix(s, "symmetric matrix")
    values, vectors = np.linalg.eigh(0.5 * (s + s.T))
    return values[::-1].copy(), vectors[:, ::-1].copy()


# ============================================================================
# Orthogonal Matrices
# ============================================================================

def random_orthogonal(dim: int, seed: Union[int, np.random.Generator, None] = None) -> Matrix:
    """
    Draw a Haar-distributed orthogonal matrix.

    Uses the QR decomposition of a Gaussian matrix and fixes the signs of the
    R diagonal so the distribution is uniform over the orthogonal group.

    Args:
        dim: Matrix dimension (>= 1)
        seed: Integer seed or numpy Generator

    Returns:
        dim x dim orthogonal matrix

    Example:
        >>> q = random_orthogonal(3, seed=0)
        >>> np.allclose(q.T @ q, np.eye(3))
        True
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = make_rng(seed)
    gaussian = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def rotation_2d(theta: float) -> Matrix:
    """
    Standard 2x2 rotation by angle theta (radians), determinant 1.

    Example:
        >>> rotation_2d(0.0)
        array([[ 1., -0.],
               [ 0.,  1.]])
    """
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def planar_rotation(dim: int, i: int, j: int, theta: float) -> Matrix:
    """
    Rotation by theta acting in the (i, j) coordinate plane of R^dim.

    Args:
        dim: Ambient dimension
        i: First plane axis
        j: Second plane axis (distinct from i)
        theta: Angle in radians

    Returns:
        dim x dim orthogonal matrix, identity outside the plane
    """
    if i == j:
        raise ValueError("Plane axes must be distinct")
    g = np.eye(dim)
    c, s = math.cos(theta), math.sin(theta)
    g[i, i] = c
    g[j, j] = c
    g[i, j] = -s
    g[j, i] = s
    return g


def is_orthogonal(q: Matrix, tol: float = TOL.orthonormal) -> bool:
    """Check that q has orthonormal columns: ||q^T q - I||_F <= tol."""
    q = as_matrix(q)
    return bool(np.linalg.norm(q.T @ q - np.eye(q.shape[1])) <= tol)


def unit_vector(v: np.ndarray) -> np.ndarray:
    """Normalize a nonzero vector."""
    v = as_vector(v)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("Cannot normalize the zero vector")
    return v / norm
