"""
Dense reference GP regression, single- and multi-output.

Used as the correctness oracle for the approximate models and as the regular
GP baseline in benchmarks. Everything here is O(N³); size guards keep it from
being called on data it cannot handle.
"""

from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from famgp.config import EXACT_MAX_N, EXACT_MAX_NM
from famgp.core import NOISE, OUTPUT_SCALE, LOG_2PI
from famgp.exceptions import EmptyDatasetError, ParameterError, SizeGuardError
from famgp.kernels import kernel_matrix, kernel_matrix_grad, kernel_of, phi_matrix, reconstruct_kernel, resolve_params
from famgp.linalg import jittered_cholesky, symmetrize
from famgp.models import Dataset, InputTransform, KernelKind, MercerBasis, MODataset, Posterior
from famgp.multioutput import check_outputs, as_coregionalization
from famgp.utils import logger

KernelFunction = Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]


def closed_form_kernel(params) -> KernelFunction:
    return lambda X, X2=None: kernel_matrix(params, X, X2)


def reconstructed_kernel(basis: MercerBasis) -> KernelFunction:
    return lambda X, X2=None: reconstruct_kernel(basis, X, X2)


class ExactGPModel:
    """
    Exact GP conditioned on training data in normalized input units.

    Attributes
    ----------
    params : KernelParams
        Kernel hyperparameters; the closed form is used unless ``basis`` is set.
    basis : MercerBasis, optional
        When given, the kernel is the reconstruction ΦΛΦᵀ of this expansion.
    transform : InputTransform
    u : np.ndarray
        Normalized training inputs.
    Y : np.ndarray
    noise : np.ndarray
        Per-sample noise variances.
    output_scale : float
    chol : Cholesky
        Factorization of K_XX + Σ_N.
    alpha : np.ndarray
        (K_XX + Σ_N)⁻¹ Y.
    """

    def __init__(self, params, basis, transform, u, Y, noise, output_scale):
        self.params = params
        self.basis = basis
        self.transform = transform
        self.u = u
        self.Y = Y
        self.noise = noise
        self.output_scale = output_scale
        self.K = self.kernel(u)
        self.chol = jittered_cholesky(self.K + np.diag(noise), "K_XX + Σ")
        self.alpha = self.chol.solve(Y)

    def kernel(self, X: np.ndarray, X2: Optional[np.ndarray] = None) -> np.ndarray:
        base = reconstructed_kernel(self.basis) if self.basis is not None else closed_form_kernel(self.params)
        return self.output_scale * base(X, X2)

    def kernel_diag(self, X: np.ndarray) -> np.ndarray:
        if self.basis is not None:
            return self.output_scale * (phi_matrix(self.basis, X) ** 2) @ self.basis.lam
        return self.output_scale * kernel_of(self.params).evaluate(self.params, X, X)

    @property
    def lml(self) -> float:
        return float(-0.5 * self.Y @ self.alpha - 0.5 * self.chol.log_det() - 0.5 * self.Y.size * LOG_2PI)


def _check_size(count: int, limit: int, label: str) -> None:
    if count == 0:
        raise EmptyDatasetError("The dataset has no observations.")
    if count > limit:
        raise SizeGuardError(f"Dense GP on {count} {label} exceeds the guard {limit}")


def exact_fit(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    basis: Optional[MercerBasis] = None,
    output_scale: float = 1.0,
    max_n: int = EXACT_MAX_N,
) -> ExactGPModel:
    """
    Factorize K_XX + Σ_N for ``dataset``.

    Raises
    ------
    SizeGuardError
        If the dataset has more than ``max_n`` samples.
    """
    _check_size(dataset.n_samples, max_n, "samples")
    params = resolve_params(kind, params)
    transform = InputTransform.from_data(dataset.X)
    noise = np.broadcast_to(np.asarray(dataset.noise_variance, dtype=float), (dataset.n_samples,)).copy()
    model = ExactGPModel(params, basis, transform, transform.apply(dataset.X), dataset.Y, noise, output_scale)
    logger.debug(f"Exact GP factorized on {dataset.n_samples} samples")
    return model


def exact_predict(
    model: ExactGPModel, X_star: np.ndarray, with_covariance: bool = False, variance: bool = True
) -> Posterior:
    """μ* = K*X (K_XX + Σ)⁻¹ Y and Σ* = K** − K*X (K_XX + Σ)⁻¹ KX*."""
    u_star = model.transform.apply(np.asarray(X_star, dtype=float).reshape(-1))
    cross = model.kernel(u_star, model.u)
    mean = cross @ model.alpha
    solved = model.chol.solve(cross.T)
    covariance = variance_diag = None
    if with_covariance:
        covariance = symmetrize(model.kernel(u_star) - cross @ solved)
    elif variance:
        variance_diag = model.kernel_diag(u_star) - np.sum(cross * solved.T, axis=1)
    return Posterior(mean=mean, covariance=covariance, variance=variance_diag)


def _kernel_derivative(model: ExactGPModel, name: str) -> np.ndarray:
    if name == NOISE:
        if np.ptp(model.noise) != 0:
            raise ParameterError("Per-point noise variances are fixed and have no gradient.")
        return np.eye(model.u.size)
    if name == OUTPUT_SCALE:
        return model.K / model.output_scale
    if model.basis is not None:
        raise ParameterError(f"No closed-form derivative of a reconstructed kernel for '{name}'")
    kernel_of(model.params).check_param(name)
    return model.output_scale * kernel_matrix_grad(model.params, model.u, None, name)


def exact_lml_and_grads(model: ExactGPModel, names: Iterable[str]) -> Tuple[float, Dict[str, float]]:
    """LML with gradients ½ αᵀ ∂K α − ½ tr(K⁻¹ ∂K)."""
    names = list(names)
    inverse = model.chol.inverse() if names else None
    grads = {}
    for name in names:
        dK = _kernel_derivative(model, name)
        grads[name] = float(0.5 * model.alpha @ dK @ model.alpha - 0.5 * np.sum(inverse * dK))
    return model.lml, grads


def exact_lml_and_grad(model: ExactGPModel, param_name: str) -> Tuple[float, float]:
    lml, grads = exact_lml_and_grads(model, [param_name])
    return lml, grads[param_name]


def noise_covariance(dataset: MODataset) -> np.ndarray:
    """Σ_NM as a dense output-major matrix."""
    N, M = dataset.Y.shape
    if dataset.noise_kind == "full":
        return np.array(dataset.noise)
    if dataset.noise_kind == "separable":
        return np.kron(dataset.noise, np.eye(N))
    if dataset.noise_kind == "per-entry":
        return np.diag(dataset.noise.T.reshape(-1))
    covariance = np.zeros((N * M, N * M))
    samples = np.arange(N)
    for j in range(M):
        for l in range(M):
            covariance[j * N + samples, l * N + samples] = dataset.noise[:, j, l]
    return covariance


class ExactMOModel:
    """Dense multi-output GP with covariance K_f ⊗ K_XX + noise_scale * Σ_NM on the observed entries."""

    def __init__(self, dataset: MODataset, params, basis, K_f, noise_scale: float):
        self.params = params
        self.basis = basis
        self.coregionalization = as_coregionalization(K_f)
        self.transform = InputTransform.from_data(dataset.X)
        self.u = self.transform.apply(dataset.X)
        self.N, self.M = dataset.Y.shape
        self.mask = dataset.observed.T.reshape(-1)
        self.noise_scale = noise_scale
        self.noise = noise_covariance(dataset)[np.ix_(self.mask, self.mask)]
        self.y = dataset.vectorized()[self.mask]
        self.K = self.kernel(self.u)
        covariance = np.kron(self.coregionalization.K_f, self.K)[np.ix_(self.mask, self.mask)]
        self.chol = jittered_cholesky(covariance + noise_scale * self.noise, "K_f ⊗ K_XX + Σ")
        self.alpha = self.chol.solve(self.y)

    def kernel(self, X: np.ndarray, X2: Optional[np.ndarray] = None) -> np.ndarray:
        base = reconstructed_kernel(self.basis) if self.basis is not None else closed_form_kernel(self.params)
        return base(X, X2)

    @property
    def lml(self) -> float:
        return float(-0.5 * self.y @ self.alpha - 0.5 * self.chol.log_det() - 0.5 * self.y.size * LOG_2PI)

    def embedded(self) -> Tuple[np.ndarray, np.ndarray]:
        """α and the inverse covariance padded with zeros at missing entries, as (M, N) and (M, N, M, N)."""
        size = self.N * self.M
        v = np.zeros(size)
        v[self.mask] = self.alpha
        inverse = np.zeros((size, size))
        inverse[np.ix_(self.mask, self.mask)] = self.chol.inverse()
        return v.reshape(self.M, self.N), inverse.reshape(self.M, self.N, self.M, self.N)


def exact_mo_fit(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    K_f,
    noise_scale: float = 1.0,
    basis: Optional[MercerBasis] = None,
    max_nm: int = EXACT_MAX_NM,
) -> ExactMOModel:
    """
    Raises
    ------
    SizeGuardError
        If N * M exceeds ``max_nm``.
    """
    _check_size(dataset.n_samples * dataset.n_outputs, max_nm, "sample-output pairs")
    params = resolve_params(kind, params)
    return ExactMOModel(dataset, params, basis, K_f, noise_scale)


def exact_mo_predict(
    model: ExactMOModel,
    X_star: np.ndarray,
    outputs: Optional[Sequence[int]] = None,
    with_covariance: bool = False,
    variance: bool = True,
) -> Posterior:
    """Dense multi-output prediction by substituting K_f ⊗ K*X for the cross-covariance."""
    outputs = check_outputs(outputs, model.M)
    u_star = model.transform.apply(np.asarray(X_star, dtype=float).reshape(-1))
    K_f = model.coregionalization.K_f[np.ix_(outputs, outputs)]
    cross = np.kron(model.coregionalization.K_f[list(outputs)], model.kernel(u_star, model.u))[:, model.mask]
    mean = cross @ model.alpha
    solved = model.chol.solve(cross.T)
    covariance = variance_diag = None
    prior = np.kron(K_f, model.kernel(u_star))
    if with_covariance:
        covariance = symmetrize(prior - cross @ solved)
    elif variance:
        variance_diag = np.diag(prior) - np.sum(cross * solved.T, axis=1)
    return Posterior(mean=mean, covariance=covariance, variance=variance_diag, outputs=outputs)


def exact_mo_fit_predict(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    K_f,
    X_star: np.ndarray,
    outputs: Optional[Sequence[int]] = None,
    with_covariance: bool = False,
    noise_scale: float = 1.0,
    basis: Optional[MercerBasis] = None,
) -> Posterior:
    model = exact_mo_fit(dataset, kind, params, K_f, noise_scale, basis)
    return exact_mo_predict(model, X_star, outputs, with_covariance)


def exact_mo_lml_and_grads(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    K_f,
    noise_scale: float = 1.0,
    names: Iterable[str] = (),
    with_kf: bool = True,
    basis: Optional[MercerBasis] = None,
) -> Tuple[float, Dict[str, float], Optional[np.ndarray]]:
    """
    Dense multi-output LML with gradients for kernel parameters, the noise scale and L.
    """
    names = list(names)
    model = exact_mo_fit(dataset, kind, params, K_f, noise_scale, basis)
    v, inverse = model.embedded()
    K_f = model.coregionalization.K_f
    grads = {}
    for name in names:
        if name == NOISE:
            full_inverse = inverse.reshape(model.N * model.M, -1)[np.ix_(model.mask, model.mask)]
            grads[name] = float(0.5 * model.alpha @ model.noise @ model.alpha - 0.5 * np.sum(full_inverse * model.noise))
            continue
        if basis is not None:
            raise ParameterError(f"No closed-form derivative of a reconstructed kernel for '{name}'")
        kernel_of(model.params).check_param(name)
        dK = kernel_matrix_grad(model.params, model.u, None, name)
        quad = v @ dK @ v.T
        trace = np.einsum("lajb,ab->lj", inverse, dK)
        grads[name] = float(0.5 * np.sum(K_f * quad) - 0.5 * np.sum(K_f * trace.T))
    kf = None
    if with_kf:
        Q = v @ model.K @ v.T
        T = np.einsum("lajb,ab->jl", inverse, model.K)
        kf = np.tril((Q - T) @ model.coregionalization.L)
    return model.lml, grads, kf
