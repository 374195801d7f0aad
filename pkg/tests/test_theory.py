"""
Unit tests for orthovae.theory module.
"""

import math

import numpy as np
import pytest

from orthovae.errors import DegenerateMatrixError, ShapeError
from orthovae.linalg import random_orthogonal
from orthovae.theory import (
    AXES_DEGENERATE,
    AXES_NO,
    AXES_YES,
    Assignment,
    IsolatedProblem,
    amgm_gap,
    axes_preserving_check,
    certify,
    closed_form_optimum,
    column_norm_product,
    column_norms,
    column_orthogonality_equivalence,
    example_decoders,
    expected_stochastic_loss,
    global_lower_bound,
    hadamard_gap,
    improve_to_optimum,
    local_improvement_step,
    optimal_sigmas,
    orthogonality_residual,
    orthogonalizing_rotation,
    pca_fit,
    pca_objective,
    problem_objective,
    random_assignment,
    volume_bound_gap,
)


@pytest.fixture
def m1():
    return example_decoders()["M1"]


@pytest.fixture
def m2():
    return example_decoders()["M2"]


class TestWorkedExamples:
    """Test the two-column worked examples."""

    def test_m1_coefficients(self, m1):
        """M1 weighs the variances by 50 and 3."""
        assert np.allclose(column_norms(m1) ** 2, [50.0, 3.0])
        assert expected_stochastic_loss(m1, np.array([1.0, 1.0])) == pytest.approx(53.0)

    def test_m2_coefficients(self, m2):
        """Rotating M1 by 45 degrees gives weights 30.5 and 22.5."""
        assert np.allclose(column_norms(m2) ** 2, [30.5, 22.5])

    def test_m1_optimal_allocation(self, m1):
        """At zero budget the minimum is 2 sqrt(150), about 24.5."""
        variances, minimum = optimal_sigmas(m1, 0.0)
        assert minimum == pytest.approx(2.0 * math.sqrt(150.0), rel=1e-12)
        assert minimum == pytest.approx(24.5, abs=0.05)
        assert np.allclose(column_norms(m1) ** 2 * variances, minimum / 2.0)
        assert -np.sum(np.log(variances)) == pytest.approx(0.0, abs=1e-12)

    def test_m2_optimal_allocation_is_worse(self, m1, m2):
        """The rotated decoder needs about 52.4 at zero budget."""
        _, minimum = optimal_sigmas(m2, 0.0)
        assert minimum == pytest.approx(2.0 * math.sqrt(30.5 * 22.5), rel=1e-12)
        assert minimum == pytest.approx(52.4, abs=0.05)
        assert minimum > optimal_sigmas(m1, 0.0)[1]

    def test_budget_scaling(self, m1):
        """Spending budget C scales the minimum by exp(-C / d)."""
        _, base = optimal_sigmas(m1, 0.0)
        _, spent = optimal_sigmas(m1, 3.0)
        assert spent == pytest.approx(base * math.exp(-1.5), rel=1e-12)

    def test_zero_column_rejected(self):
        """A zero column leaves the allocation unbounded."""
        with pytest.raises(DegenerateMatrixError):
            optimal_sigmas(np.array([[1.0, 0.0], [0.0, 0.0]]), 0.0)

    def test_orthogonalized_m1(self, m1):
        """After rotation the columns of M1 are orthogonal with product sqrt(134)."""
        v, degenerate = orthogonalizing_rotation(m1)
        rotated = m1 @ v.T
        assert not degenerate
        assert orthogonality_residual(rotated) < 1e-10
        assert column_norm_product(rotated) == pytest.approx(math.sqrt(134.0), rel=1e-10)
        assert column_norm_product(m1) == pytest.approx(math.sqrt(150.0), rel=1e-12)


class TestAxesPreserving:
    """Test the axes-preserving classification."""

    def test_orthogonal_columns(self):
        """Distinct orthogonal columns preserve axes."""
        assert axes_preserving_check(np.diag([2.0, 1.0])) == AXES_YES

    def test_oblique_columns(self, m1):
        """M1 mixes its axes."""
        assert axes_preserving_check(m1) == AXES_NO

    def test_repeated_singular_values(self):
        """Equal singular values leave the axes undetermined."""
        assert axes_preserving_check(np.eye(3)) == AXES_DEGENERATE


class TestLemmas:
    """Test the inequality verifiers."""

    def test_amgm_gap(self):
        """AM-GM gap is zero for equal values and positive otherwise."""
        assert amgm_gap([2.0, 2.0, 2.0]) == 0.0
        assert amgm_gap([1.0, 4.0]) == pytest.approx(0.5)

    def test_amgm_rejects_negative(self):
        """Negative values are outside the inequality."""
        with pytest.raises(ValueError):
            amgm_gap([1.0, -1.0])

    def test_hadamard_gap(self, rng):
        """col(M) >= |det M|, with equality for orthogonal columns."""
        assert hadamard_gap(rng.standard_normal((3, 3))) >= 0.0
        assert hadamard_gap(np.diag([2.0, 3.0])) == pytest.approx(0.0)

    def test_hadamard_needs_square(self, m1):
        """Only square matrices have a determinant."""
        with pytest.raises(ShapeError):
            hadamard_gap(m1)

    def test_orthogonality_conditions_agree(self, m1, rng):
        """The three column-orthogonality conditions agree."""
        assert set(column_orthogonality_equivalence(m1).values()) == {False}
        q, _ = np.linalg.qr(rng.standard_normal((4, 3)))
        assert set(column_orthogonality_equivalence(q * [0.5, 2.0, 1.3]).values()) == {True}

    def test_volume_bound(self, m1, rng):
        """col(M V^T) never drops below psdet(M) and meets it after orthogonalization."""
        for _ in range(20):
            assert volume_bound_gap(m1, random_orthogonal(2, rng)) >= -1e-12
        v, _ = orthogonalizing_rotation(m1)
        assert volume_bound_gap(m1, v) == pytest.approx(0.0, abs=1e-10)


class TestIsolatedProblem:
    """Test the per-sample optimization problem."""

    def test_lower_bound_of_m1(self, m1):
        """For one M1 sample at zero budget the bound is log(2 sqrt(134))."""
        problem = IsolatedProblem([m1], budget=0.0)
        assert global_lower_bound(problem) == pytest.approx(math.log(2.0 * math.sqrt(134.0)), rel=1e-12)

    def test_closed_form_attains_bound(self, rng):
        """The closed-form assignment meets the bound."""
        problem = IsolatedProblem.random(4, 5, 3, budget=1.5, rng=rng)
        optimum = closed_form_optimum(problem)
        assert problem_objective(problem, optimum) == pytest.approx(global_lower_bound(problem), abs=1e-9)
        assert optimum.budget() == pytest.approx(1.5)

    def test_random_assignment_feasible(self, rng):
        """Random starts satisfy the budget and are no better than the bound."""
        problem = IsolatedProblem.random(5, 4, 2, budget=-2.0, rng=rng)
        start = random_assignment(problem, rng)
        assert start.budget() == pytest.approx(-2.0)
        assert problem_objective(problem, start) >= global_lower_bound(problem)

    def test_mixed_widths_rejected(self):
        """All Jacobians share the latent width."""
        with pytest.raises(ShapeError):
            IsolatedProblem([np.eye(2), np.eye(3)])

    def test_empty_rejected(self):
        """A problem needs at least one sample."""
        with pytest.raises(ValueError):
            IsolatedProblem([])

    def test_steps_never_increase_objective(self, rng):
        """Each local step lowers the objective or stops."""
        problem = IsolatedProblem.random(3, 3, 2, rng=rng)
        current = random_assignment(problem, rng)
        value = problem_objective(problem, current)
        for _ in range(50):
            result = local_improvement_step(current, problem)
            if result.status != "improved":
                break
            assert result.objective < value
            current, value = result.assignment, result.objective

    def test_optimum_is_recognized(self, rng):
        """A step from the closed-form optimum reports optimality."""
        problem = IsolatedProblem.random(2, 3, 2, rng=rng)
        result = local_improvement_step(closed_form_optimum(problem), problem)
        assert result.status == "optimal"

    def test_improvement_reaches_bound(self, rng):
        """Local improvement from a random start is certified optimal."""
        problem = IsolatedProblem.random(3, 3, 2, budget=0.5, rng=rng)
        certificate = improve_to_optimum(problem, rng=rng)
        assert certificate.certified
        assert certificate.relative_gap <= 1e-6
        assert max(certificate.orthogonality_residuals) < 1e-2

    def test_certificate_of_bad_assignment(self, m1):
        """An unrotated oblique Jacobian is not certified."""
        problem = IsolatedProblem([m1])
        assignment = Assignment(np.ones((1, 2)), [np.eye(2)])
        certificate = certify(problem, assignment)
        assert not certificate.certified
        assert certificate.gap > 0.0
        record = certificate.to_dict()
        assert record["certified"] is False
        assert set(record) >= {"objective", "lower_bound", "sigmas", "orthogonality_residuals"}


class TestPca:
    """Test the PCA baseline."""

    def test_recovers_planar_data(self, rng):
        """Rank-2 data is reconstructed exactly by two components."""
        basis = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, -1.0]])
        data = rng.standard_normal((200, 2)) @ basis + np.array([1.0, -1.0, 0.5])
        model = pca_fit(data, 2)
        assert model.reconstruction_error(data) == pytest.approx(0.0, abs=1e-16)
        assert pca_objective(data, model.components) == pytest.approx(0.0, abs=1e-16)
        assert np.allclose(model.components @ model.components.T, np.eye(2))

    def test_objective_of_first_component(self, rng):
        """Keeping one component leaves the smaller eigenvalue as error."""
        data = rng.standard_normal((500, 2)) * [3.0, 0.5]
        model = pca_fit(data, 1)
        assert model.reconstruction_error(data) == pytest.approx(model.eigenvalues[1], rel=1e-9)
        assert not model.degenerate

    def test_isotropic_data_is_degenerate(self):
        """Equal eigenvalues make the principal directions arbitrary."""
        data = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        assert pca_fit(data, 1).degenerate

    def test_latent_dim_checked(self, rng):
        """latent_dim must not exceed the data width."""
        with pytest.raises(ValueError):
            pca_fit(rng.standard_normal((10, 2)), 3)
