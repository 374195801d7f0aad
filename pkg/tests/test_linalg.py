"""
Unit tests for orthovae.linalg module.
"""

import math

import numpy as np
import pytest

from orthovae.config import TOL
from orthovae.errors import DegenerateMatrixError, NotPositiveDefiniteError, ShapeError
from orthovae.linalg import (
    cholesky_factor,
    has_repeated_singular_values,
    is_orthogonal,
    log_psdet,
    planar_rotation,
    psdet,
    random_orthogonal,
    rotation_2d,
    singular_values,
    svd,
    symmetric_eigh,
    unit_vector,
)


class TestSvd:
    """Test the Jacobi singular value decomposition."""

    @pytest.mark.parametrize("shape", [(3, 2), (2, 3), (5, 5), (6, 1), (1, 4)])
    def test_reconstruction(self, rng, shape):
        """U diag(sigma) V^T reproduces the input."""
        m = rng.standard_normal(shape)
        f = svd(m)
        err = np.linalg.norm(f.reconstruct() - m) / np.linalg.norm(m)
        assert err <= TOL.svd_reconstruction

    def test_factors_orthonormal(self, rng):
        """U and V have orthonormal columns."""
        f = svd(rng.standard_normal((5, 3)))
        assert is_orthogonal(f.u)
        assert is_orthogonal(f.v)

    def test_sigma_descending_matches_numpy(self, rng):
        """Singular values are sorted and agree with LAPACK."""
        m = rng.standard_normal((4, 3))
        sigma = singular_values(m)
        assert np.all(np.diff(sigma) <= 0)
        assert np.allclose(sigma, np.linalg.svd(m, compute_uv=False), rtol=1e-10)

    def test_diagonal_input(self):
        """A diagonal matrix yields its absolute diagonal."""
        assert np.allclose(svd(np.diag([3.0, -2.0])).sigma, [3.0, 2.0])

    def test_rank_deficient(self):
        """A rank-one matrix has a zero trailing singular value and orthonormal U."""
        m = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
        f = svd(m)
        assert f.sigma[1] == 0.0
        assert is_orthogonal(f.u)
        assert np.allclose(f.reconstruct(), m)

    def test_repeated_values_detected(self):
        """Equal singular values are reported as repeated."""
        assert has_repeated_singular_values(singular_values(2.0 * np.eye(3)))
        assert not has_repeated_singular_values(np.array([3.0, 2.0, 1.0]))

    @pytest.mark.parametrize("seed", range(20))
    def test_sigma_matches_gram_eigenvalues(self, seed):
        """Singular values are the roots of the eigenvalues of M^T M for random shapes."""
        gen = np.random.default_rng(seed)
        n, d = int(gen.integers(1, 9)), int(gen.integers(1, 7))
        m = gen.standard_normal((n, d))
        expected = np.sqrt(np.clip(np.linalg.eigvalsh(m.T @ m), 0.0, None))[::-1]
        k = min(n, d)
        sigma = singular_values(m)
        assert np.allclose(sigma[:k], expected[:k], rtol=1e-8, atol=1e-6 * expected[0])


class TestPsdet:
    """Test pseudo-determinants."""

    def test_square_matches_determinant(self, rng):
        """For square matrices psdet is |det|."""
        m = rng.standard_normal((3, 3))
        assert psdet(m) == pytest.approx(abs(np.linalg.det(m)), rel=1e-10)

    def test_tall_matrix(self):
        """psdet of a tall matrix is sqrt(det(M^T M))."""
        m = np.array([[4.0, 1.0], [-3.0, 1.0], [5.0, -1.0]])
        assert psdet(m) == pytest.approx(math.sqrt(np.linalg.det(m.T @ m)), rel=1e-12)
        assert log_psdet(m) == pytest.approx(math.log(psdet(m)), rel=1e-12)

    def test_rank_deficient_raises(self):
        """Rank-deficient input is rejected."""
        with pytest.raises(DegenerateMatrixError):
            psdet(np.outer([1.0, 2.0], [1.0, 1.0]))

    def test_worked_example(self):
        """The two-column example matrix has psdet sqrt(134)."""
        m = np.array([[4.0, 1.0], [-3.0, 1.0], [5.0, -1.0]])
        assert psdet(m) == pytest.approx(math.sqrt(134.0), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariant_under_left_rotation(self, seed):
        """psdet(Q M) equals psdet(M) for orthogonal Q."""
        gen = np.random.default_rng(seed)
        m = gen.standard_normal((5, 3))
        q = random_orthogonal(5, gen)
        assert psdet(q @ m) == pytest.approx(psdet(m), rel=1e-10)


class TestSymmetric:
    """Test Cholesky and eigendecomposition."""

    def test_cholesky_roundtrip(self, rng):
        """L L^T reproduces an SPD matrix and L has a positive diagonal."""
        a = rng.standard_normal((4, 4))
        spd = a @ a.T + 4.0 * np.eye(4)
        factor = cholesky_factor(spd)
        assert np.allclose(factor, np.tril(factor))
        assert np.all(np.diag(factor) > 0)
        assert np.max(np.abs(factor @ factor.T - spd)) <= TOL.cholesky * 10

    def test_cholesky_factor_is_unique(self, rng):
        """Refactoring L L^T for a positive-diagonal L gives back L."""
        lower = np.tril(rng.standard_normal((4, 4)))
        np.fill_diagonal(lower, np.abs(np.diag(lower)) + 0.5)
        factor = cholesky_factor(lower @ lower.T)
        assert np.all(np.diag(factor) > 0)
        assert np.allclose(factor, lower, atol=1e-10)
        assert np.allclose(cholesky_factor(factor @ factor.T), factor, atol=1e-10)

    def test_cholesky_rejects_indefinite(self):
        """A matrix with a negative eigenvalue is rejected."""
        with pytest.raises(NotPositiveDefiniteError):
            cholesky_factor(np.diag([1.0, -1.0]))

    def test_cholesky_rejects_asymmetric(self):
        """An asymmetric matrix is rejected."""
        with pytest.raises(NotPositiveDefiniteError):
            cholesky_factor(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_cholesky_rejects_rectangular(self):
        """Non-square input raises ShapeError."""
        with pytest.raises(ShapeError):
            cholesky_factor(np.ones((2, 3)))

    def test_eigh_descending(self):
        """Eigenvalues are returned largest first."""
        values, vectors = symmetric_eigh(np.diag([1.0, 3.0, 2.0]))
        assert np.allclose(values, [3.0, 2.0, 1.0])
        assert np.allclose(np.abs(vectors[:, 0]), [0.0, 1.0, 0.0])


class TestOrthogonal:
    """Test orthogonal matrix generators."""

    def test_random_orthogonal(self):
        """Haar draws are orthogonal and reproducible per seed."""
        q = random_orthogonal(4, seed=1)
        assert is_orthogonal(q)
        assert np.array_equal(q, random_orthogonal(4, seed=1))

    def test_random_orthogonal_rejects_zero_dim(self):
        """Dimension must be positive."""
        with pytest.raises(ValueError):
            random_orthogonal(0)

    def test_rotation_2d(self):
        """Quarter turn maps e1 to e2 with determinant one."""
        r = rotation_2d(math.pi / 2)
        assert np.allclose(r @ [1.0, 0.0], [0.0, 1.0])
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_planar_rotation_acts_in_plane(self):
        """Axes outside the plane are untouched."""
        g = planar_rotation(4, 1, 3, 0.3)
        assert is_orthogonal(g)
        assert np.allclose(g[:, 0], [1.0, 0.0, 0.0, 0.0])
        assert np.allclose(g[:, 2], [0.0, 0.0, 1.0, 0.0])

    def test_planar_rotation_rejects_equal_axes(self):
        """The two plane axes must differ."""
        with pytest.raises(ValueError):
            planar_rotation(3, 1, 1, 0.1)

    def test_unit_vector(self):
        """Normalization gives norm one; the zero vector is rejected."""
        assert np.linalg.norm(unit_vector(np.array([3.0, 4.0]))) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            unit_vector(np.zeros(3))
