import numpy as np
import pytest

from famgp.exceptions import FactorizationError, JitterWarning
from famgp.linalg import jittered_cholesky, spd_sqrt


def test_cholesky_solve_and_log_det(rng):
    """
    Test the factorization of a well-conditioned SPD matrix without jitter.
    """
    # Arrange
    A = rng.standard_normal((5, 5))
    matrix = A @ A.T + 5.0 * np.eye(5)
    rhs = rng.standard_normal(5)

    # Act
    chol = jittered_cholesky(matrix)

    # Assert
    assert chol.jitter == 0.0
    np.testing.assert_allclose(matrix @ chol.solve(rhs), rhs, atol=1e-10)
    np.testing.assert_allclose(chol.inverse(), np.linalg.inv(matrix), atol=1e-10)
    assert chol.log_det() == pytest.approx(np.linalg.slogdet(matrix)[1])


def test_singular_matrix_gets_jitter():
    with pytest.warns(JitterWarning, match="with jitter"):
        chol = jittered_cholesky(np.ones((3, 3)), "ones")
    assert 0.0 < chol.jitter <= 1e-6


def test_indefinite_matrix_raises():
    with pytest.raises(FactorizationError, match="not positive definite even with jitter"):
        jittered_cholesky(-np.eye(3), "negated identity")


def test_non_finite_matrix_raises():
    with pytest.raises(FactorizationError, match="non-finite"):
        jittered_cholesky(np.array([[1.0, np.nan], [np.nan, 1.0]]))


def test_spd_square_root(rng):
    # Arrange
    A = rng.standard_normal((4, 4))
    matrix = A @ A.T + np.eye(4)

    # Act
    root, inverse_root = spd_sqrt(matrix)

    # Assert
    np.testing.assert_allclose(root @ root, matrix, atol=1e-10)
    np.testing.assert_allclose(root @ inverse_root, np.eye(4), atol=1e-10)
    with pytest.raises(FactorizationError):
        spd_sqrt(-matrix)
