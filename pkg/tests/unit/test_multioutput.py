import numpy as np
import pytest

from famgp.core import NOISE, fit, predict
from famgp.exact import exact_mo_fit_predict, exact_mo_lml_and_grads, noise_covariance
from famgp.exceptions import DimensionMismatchError, EigenvalueFloorWarning, EmptyDatasetError
from famgp.kernels import make_basis
from famgp.models import CoregionalizationMatrix, Dataset, MODataset, OptimizerConfig, replace_params
from famgp.multioutput import (
    commutation_matrix,
    kf_grad,
    mo_fit,
    mo_inverse_separable,
    mo_lml_and_grads,
    mo_log_marginal_likelihood,
    mo_predict,
)
from famgp.training import train_multioutput
from tests.conftest import SE, finite_difference

K_F = np.array([[1.0, -0.6], [-0.6, 0.8]])
N_EIGS = 12
X_STAR = np.linspace(-0.9, 0.9, 11)


def _with_noise(dataset: MODataset, kind: str, rng) -> MODataset:
    N, M = dataset.Y.shape
    if kind == "separable":
        noise = np.array([[0.06, 0.01], [0.01, 0.04]])
    elif kind == "per-entry":
        noise = rng.uniform(0.02, 0.08, (N, M))
    else:
        blocks = np.empty((N, M, M))
        for i in range(N):
            a, b = rng.uniform(0.02, 0.08, 2)
            c = 0.5 * np.sqrt(a * b) * rng.uniform(-1.0, 1.0)
            blocks[i] = [[a, c], [c, b]]
        noise = blocks
        if kind == "full":
            noise = noise_covariance(MODataset(X=dataset.X, Y=dataset.Y, noise_kind="per-sample", noise=blocks))
    return MODataset(X=dataset.X, Y=dataset.Y, noise_kind=kind, noise=noise)


def test_commutation_matrix_transposes_column_major_vectors(rng):
    """
    Test that T vec(A) = vec(Aᵀ).
    """
    # Arrange
    A = rng.standard_normal((3, 3))

    # Act
    T = commutation_matrix(3)

    # Assert
    np.testing.assert_array_equal(T @ A.reshape(-1, order="F"), A.T.reshape(-1, order="F"))
    np.testing.assert_array_equal(T @ T, np.eye(9))


def test_separable_inverse_matches_direct_inverse(rng):
    """
    Test the eigendecomposition inverse against the dense inverse of the nM x nM system.
    """
    # Arrange
    n = 6
    S_M = np.array([[0.3, 0.1], [0.1, 0.2]])
    Phi = rng.standard_normal((25, n))
    lam = np.linspace(1.0, 0.1, n)
    direct = np.linalg.inv(np.kron(np.linalg.inv(K_F), np.diag(1.0 / lam)) + np.kron(np.linalg.inv(S_M), Phi.T @ Phi))
    v = rng.standard_normal(2 * n)

    # Act
    inverse = mo_inverse_separable(S_M, K_F, Phi, lam)

    # Assert
    np.testing.assert_allclose(inverse.dense(), direct, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(inverse.apply(v), direct @ v, rtol=1e-9, atol=1e-12)


def test_separable_inverse_rejects_mismatched_shapes(rng):
    with pytest.raises(DimensionMismatchError):
        mo_inverse_separable(np.eye(3), K_F, rng.standard_normal((10, 4)), np.ones(4))


def test_separable_and_direct_fits_agree(mo_dataset, se_params):
    """
    Test that both solve paths give the same compressed posterior.
    """
    # Act
    separable = mo_fit(mo_dataset, SE, se_params, N_EIGS, K_F, separable=True)
    direct = mo_fit(mo_dataset, SE, se_params, N_EIGS, K_F, separable=False)

    # Assert
    np.testing.assert_allclose(separable.alpha_prime, direct.alpha_prime, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(separable.G, direct.G, rtol=1e-8, atol=1e-10)


def test_identity_similarity_matches_independent_fits(mo_dataset, se_params):
    """
    Test that K_f = I with diagonal noise decouples into single-output fits.
    """
    # Arrange
    model = mo_fit(mo_dataset, SE, se_params, N_EIGS, np.eye(2))

    # Act
    joint = mo_predict(model, X_STAR)

    # Assert
    for j in range(2):
        single = fit(Dataset(X=mo_dataset.X, Y=mo_dataset.Y[:, j], noise_variance=0.05), SE, se_params, N_EIGS)
        reference = predict(single, X_STAR)
        np.testing.assert_allclose(joint.mean[j * X_STAR.size : (j + 1) * X_STAR.size], reference.mean, atol=1e-9)
        np.testing.assert_allclose(
            joint.variance[j * X_STAR.size : (j + 1) * X_STAR.size], reference.variance, atol=1e-9
        )


@pytest.mark.parametrize("noise_kind", ["separable", "per-entry", "per-sample", "full"])
def test_prediction_matches_exact_gp_with_missing_outputs(mo_dataset_missing, se_params, noise_kind, rng):
    """
    Test every noise layout with missing entries against the dense multi-output GP on ΦΛΦᵀ.
    """
    # Arrange
    dataset = _with_noise(mo_dataset_missing, noise_kind, rng)
    model = mo_fit(dataset, SE, se_params, N_EIGS, K_F, noise_scale=1.4)

    # Act
    approx = mo_predict(model, X_STAR, with_covariance=True)
    reference = exact_mo_fit_predict(
        dataset, SE, se_params, K_F, X_STAR, with_covariance=True, noise_scale=1.4, basis=model.basis
    )

    # Assert
    np.testing.assert_allclose(approx.mean, reference.mean, atol=1e-8)
    np.testing.assert_allclose(approx.covariance, reference.covariance, atol=1e-8)


@pytest.mark.parametrize("noise_kind", ["separable", "per-entry", "per-sample"])
def test_lml_matches_exact_gp(mo_dataset_missing, se_params, noise_kind, rng):
    # Arrange
    dataset = _with_noise(mo_dataset_missing, noise_kind, rng)
    basis = make_basis(SE, se_params, N_EIGS)

    # Act
    lml = mo_log_marginal_likelihood(dataset, SE, se_params, N_EIGS, K_F, 0.8)
    reference, _, _ = exact_mo_lml_and_grads(dataset, SE, se_params, K_F, 0.8, with_kf=False, basis=basis)

    # Assert
    assert lml == pytest.approx(reference, rel=1e-9)


def test_selected_outputs_are_a_subset_of_the_joint_prediction(mo_dataset, se_params):
    model = mo_fit(mo_dataset, SE, se_params, N_EIGS, K_F)
    joint = mo_predict(model, X_STAR)
    second = mo_predict(model, X_STAR, outputs=[1])
    np.testing.assert_allclose(second.mean, joint.mean[X_STAR.size :])
    assert second.outputs == (1,)


def test_unknown_output_index_raises(mo_dataset, se_params):
    model = mo_fit(mo_dataset, SE, se_params, N_EIGS, K_F)
    with pytest.raises(DimensionMismatchError, match="outside"):
        mo_predict(model, X_STAR, outputs=[2])


def test_similarity_size_mismatch_raises(mo_dataset, se_params):
    """
    Test that a K_f of the wrong size is rejected before any work.
    """
    with pytest.raises(DimensionMismatchError, match="outputs"):
        mo_fit(mo_dataset, SE, se_params, N_EIGS, np.eye(3))


def test_fully_missing_dataset_raises(mo_dataset, se_params):
    Y = np.full_like(mo_dataset.Y, np.nan)
    empty = MODataset(X=mo_dataset.X, Y=Y, noise=mo_dataset.noise)
    with pytest.raises(EmptyDatasetError):
        mo_fit(empty, SE, se_params, N_EIGS, K_F)


@pytest.mark.parametrize("noise_kind", ["separable", "per-sample"])
def test_hyperparameter_gradients_match_finite_difference(mo_dataset_missing, se_params, noise_kind, rng):
    """
    Test the length-scale and noise-scale gradients of the multi-output LML.
    """
    # Arrange
    dataset = _with_noise(mo_dataset_missing, noise_kind, rng)
    scale = 0.9

    # Act
    _, grads, _ = mo_lml_and_grads(dataset, SE, se_params, N_EIGS, K_F, scale, ["l_se", NOISE], with_kf=False)

    # Assert
    l_se = finite_difference(
        lambda v: mo_log_marginal_likelihood(dataset, SE, replace_params(se_params, l_se=v), N_EIGS, K_F, scale),
        0.3,
    )
    noise = finite_difference(lambda v: mo_log_marginal_likelihood(dataset, SE, se_params, N_EIGS, K_F, v), scale)
    assert grads["l_se"] == pytest.approx(l_se, rel=1e-4, abs=1e-6)
    assert grads[NOISE] == pytest.approx(noise, rel=1e-4, abs=1e-6)


def test_similarity_factor_gradient_matches_finite_difference(mo_dataset_missing, se_params):
    """
    Test ∂LML/∂L entry by entry on the lower triangle.
    """
    # Arrange
    L = np.linalg.cholesky(K_F)
    _, _, analytic = mo_lml_and_grads(mo_dataset_missing, SE, se_params, N_EIGS, K_F)

    def lml_at(row, column, value):
        shifted = L.copy()
        shifted[row, column] = value
        coreg = CoregionalizationMatrix(L=shifted)
        return mo_log_marginal_likelihood(mo_dataset_missing, SE, se_params, N_EIGS, coreg)

    # Act & Assert
    for row, column in [(0, 0), (1, 0), (1, 1)]:
        numeric = finite_difference(lambda v: lml_at(row, column, v), L[row, column])
        assert analytic[row, column] == pytest.approx(numeric, rel=1e-4, abs=1e-6)
    assert analytic[0, 1] == 0.0


def test_similarity_gradient_matches_exact_gp(mo_dataset_missing, se_params):
    # Arrange
    model = mo_fit(mo_dataset_missing, SE, se_params, N_EIGS, K_F)

    # Act
    approx = kf_grad(mo_dataset_missing, model)
    _, _, reference = exact_mo_lml_and_grads(mo_dataset_missing, SE, se_params, K_F, basis=model.basis)

    # Assert
    np.testing.assert_allclose(approx, reference, rtol=1e-7, atol=1e-8)


def test_lml_with_floored_basis_uses_retained_eigenpairs(mo_dataset):
    """
    Test that asking for more eigenpairs than the floor keeps gives the LML and gradients of the retained basis.
    """
    # Arrange
    params = {"l_se": 0.5}
    with pytest.warns(EigenvalueFloorWarning):
        retained = make_basis(SE, params, 75).n

    # Act
    with pytest.warns(EigenvalueFloorWarning):
        lml, grads, kf = mo_lml_and_grads(mo_dataset, SE, params, 75, K_F, names=["l_se", NOISE])
    reference, reference_grads, reference_kf = mo_lml_and_grads(
        mo_dataset, SE, params, retained, K_F, names=["l_se", NOISE]
    )

    # Assert
    assert retained < 75
    assert lml == pytest.approx(reference, rel=1e-10)
    assert grads["l_se"] == pytest.approx(reference_grads["l_se"], rel=1e-8)
    np.testing.assert_allclose(kf, reference_kf, rtol=1e-8, atol=1e-10)


def test_training_with_floored_basis(mo_dataset):
    """
    Test that multi-output training runs when the eigenvalue floor shortens the basis.
    """
    # Arrange
    config = OptimizerConfig(max_iters=5, initial_step=0.05)

    # Act
    with pytest.warns(EigenvalueFloorWarning):
        result = train_multioutput(mo_dataset, SE, {"l_se": 0.5}, 75, config=config)

    # Assert
    assert result.model.basis.n < result.model.basis.requested_n == 75
    assert result.model.alpha_prime.shape == (2 * result.model.basis.n,)
    assert np.isfinite(result.trace.final_lml)
