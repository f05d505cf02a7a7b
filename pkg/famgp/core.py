"""
Single-output approximate GP on a truncated Mercer expansion.

The N x N Gram matrix is never formed: every quantity is assembled from the
n x n statistic ΦᵀΣ⁻¹Φ, the n-vector ΦᵀΣ⁻¹Y and the scalar YᵀΣ⁻¹Y, which are
accumulated over row chunks. The posterior over basis weights has covariance
G = (Λ⁻¹ + ΦᵀΣ⁻¹Φ)⁻¹ and mean α′ = GΦᵀΣ⁻¹Y, so predictions only need Φ at the
test inputs.
"""

from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from famgp.config import CHUNK_ROWS, EXTRAPOLATION_SLACK
from famgp.exceptions import (
    DomainError,
    EmptyDatasetError,
    ExtrapolationWarning,
    ParameterError,
    warn,
)
from famgp.kernels import (
    kernel_of,
    lambda_grad,
    make_basis,
    phi_grad_matrix,
    phi_matrix,
    resolve_params,
)
from famgp.linalg import jittered_cholesky, symmetrize
from famgp.models import (
    Dataset,
    FittedModel,
    FloatArray,
    InputTransform,
    KernelKind,
    MercerBasis,
    Posterior,
)
from famgp.utils import logger

NOISE = "noise_variance"
OUTPUT_SCALE = "output_scale"
LOG_2PI = np.log(2.0 * np.pi)


class SufficientStatistics(BaseModel):
    """
    Data statistics under the base noise Σ₀, with Σ = noise_scale * Σ₀.

    Attributes
    ----------
    phi_phi : np.ndarray
        ΦᵀΣ₀⁻¹Φ, shape (n, n).
    y_phi : np.ndarray
        ΦᵀΣ₀⁻¹Y, shape (n,).
    y_y : float
        YᵀΣ₀⁻¹Y.
    log_det_noise : float
        log|Σ₀|.
    n_samples : int
    noise_scale : float
        σ² for homoscedastic noise, 1.0 for per-point variances folded into Σ₀.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    phi_phi: FloatArray
    y_phi: FloatArray
    y_y: float
    log_det_noise: float
    n_samples: int
    noise_scale: float = 1.0
    homoscedastic: bool = True

    def truncated(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.phi_phi[:n, :n], self.y_phi[:n]


class WeightPosterior:
    """
    Gaussian posterior over basis weights with prior covariance R Rᵀ.

    Factorizes B = I + RᵀAR, whose eigenvalues are at least one, and derives
    G = R B⁻¹ Rᵀ, α′ = G b and the log marginal likelihood. ``A``, ``b`` and
    ``y_y`` already include the noise precision.
    """

    def __init__(self, A, b, y_y, log_det_noise, count, root):
        self.A = A
        self.b = b
        root = np.diag(root) if np.ndim(root) == 1 else root
        B = np.eye(A.shape[0]) + root.T @ A @ root
        self.chol = jittered_cholesky(symmetrize(B), "B")
        self.G = symmetrize(root @ self.chol.inverse() @ root.T)
        self.alpha = self.G @ b
        self.count = count
        self.lml = float(
            -0.5 * (y_y - b @ self.alpha) - 0.5 * (self.chol.log_det() + log_det_noise) - 0.5 * count * LOG_2PI
        )

    @property
    def residual_projection(self) -> np.ndarray:
        """p = ΦᵀK⁻¹Y = b − Aα′."""
        return self.b - self.A @ self.alpha

    @property
    def trace_matrix(self) -> np.ndarray:
        """ΦᵀK⁻¹Φ = A − AGA."""
        return self.A - self.A @ self.G @ self.A


def _noise_split(dataset: Dataset) -> Tuple[np.ndarray, float]:
    """Inverse base variances and the scalar noise multiplier."""
    if dataset.homoscedastic:
        return np.ones(dataset.n_samples), float(dataset.noise_variance)
    return 1.0 / np.asarray(dataset.noise_variance), 1.0


def _check_nonempty(dataset: Dataset) -> None:
    if dataset.n_samples == 0:
        raise EmptyDatasetError("The dataset has no observations.")


def _chunks(count: int, chunk_rows: int) -> Iterable[slice]:
    for start in range(0, count, chunk_rows):
        yield slice(start, min(start + chunk_rows, count))


def compute_statistics(
    dataset: Dataset,
    basis: MercerBasis,
    transform: Optional[InputTransform] = None,
    chunk_rows: int = CHUNK_ROWS,
) -> SufficientStatistics:
    """
    Accumulate the data statistics over row chunks, holding at most chunk_rows x n of Φ.
    """
    _check_nonempty(dataset)
    transform = transform or InputTransform.from_data(dataset.X)
    u = transform.apply(dataset.X)
    precision, noise_scale = _noise_split(dataset)
    n = basis.n
    phi_phi = np.zeros((n, n))
    y_phi = np.zeros(n)
    y_y = 0.0
    for rows in _chunks(dataset.n_samples, chunk_rows):
        phi = phi_matrix(basis, u[rows])
        weighted = phi * precision[rows, None]
        phi_phi += phi.T @ weighted
        y_phi += weighted.T @ dataset.Y[rows]
        y_y += float(np.sum(precision[rows] * dataset.Y[rows] ** 2))
    logger.debug(f"Accumulated statistics over {dataset.n_samples} samples with n={n}")
    return SufficientStatistics(
        phi_phi=symmetrize(phi_phi),
        y_phi=y_phi,
        y_y=y_y,
        log_det_noise=float(-np.sum(np.log(precision))),
        n_samples=dataset.n_samples,
        noise_scale=noise_scale,
        homoscedastic=dataset.homoscedastic,
    )


def _posterior(
    stats: SufficientStatistics, basis: MercerBasis, noise_scale: float, output_scale: float
) -> WeightPosterior:
    phi_phi, y_phi = stats.truncated(basis.n)
    return WeightPosterior(
        A=phi_phi / noise_scale,
        b=y_phi / noise_scale,
        y_y=stats.y_y / noise_scale,
        log_det_noise=stats.log_det_noise + stats.n_samples * np.log(noise_scale),
        count=stats.n_samples,
        root=np.sqrt(output_scale * basis.lam),
    )


def fit(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    output_scale: float = 1.0,
    chunk_rows: int = CHUNK_ROWS,
) -> FittedModel:
    """
    Condition the approximate GP on ``dataset``.

    Raises
    ------
    EmptyDatasetError
        If the dataset has no observations.
    FactorizationError
        If the n x n system fails even at maximum jitter.
    """
    _check_nonempty(dataset)
    params = resolve_params(kind, params)
    basis = make_basis(kind, params, n)
    transform = InputTransform.from_data(dataset.X)
    stats = compute_statistics(dataset, basis, transform, chunk_rows)
    return fit_from_statistics(stats, basis, transform, dataset.noise_variance, output_scale)


def fit_from_statistics(
    stats: SufficientStatistics,
    basis: MercerBasis,
    transform: InputTransform,
    noise_variance: Union[float, np.ndarray],
    output_scale: float = 1.0,
) -> FittedModel:
    """Fitted model from cached statistics; homoscedastic ``noise_variance`` replaces the cached scale."""
    noise_scale = float(noise_variance) if stats.homoscedastic else stats.noise_scale
    post = _posterior(stats, basis, noise_scale, output_scale)
    logger.info(
        f"Fitted '{basis.kind.value}' model on {stats.n_samples} samples with n={basis.n}, LML={post.lml:.6g}"
    )
    return FittedModel(
        basis=basis,
        transform=transform,
        alpha_prime=post.alpha,
        G=post.G,
        noise_variance=noise_variance,
        output_scale=output_scale,
    )


def normalized_inputs(
    basis: MercerBasis, transform: InputTransform, X_star: np.ndarray, slack: float = EXTRAPOLATION_SLACK
) -> np.ndarray:
    """
    Map prediction inputs to normalized units, warning on extrapolation.

    Raises
    ------
    DomainError
        Chebyshev inputs more than ``slack`` beyond [-1, 1].
    """
    u = transform.apply(np.asarray(X_star, dtype=float).reshape(-1))
    excess = float(np.max(np.abs(u))) - 1.0 if u.size else 0.0
    if excess > 1e-12:
        if excess > slack and basis.kind == KernelKind.CHEBYSHEV:
            logger.error(f"Chebyshev prediction inputs reach {1 + excess:.4g} in normalized units")
            raise DomainError(
                f"Prediction inputs extend {excess:.3g} beyond the normalized range [-1, 1] (limit {slack})"
            )
        warn(f"Prediction inputs extend {excess:.3g} beyond the normalized training range", ExtrapolationWarning)
    return u


def _project(
    phi: np.ndarray, alpha: np.ndarray, G: np.ndarray, with_covariance: bool, variance: bool, factor: float = 1.0
):
    mean = factor * (phi @ alpha)
    covariance = variance_diag = None
    if with_covariance:
        covariance = factor**2 * symmetrize(phi @ G @ phi.T)
    elif variance:
        variance_diag = factor**2 * np.einsum("ij,jk,ik->i", phi, G, phi)
    return mean, covariance, variance_diag


def predict(
    model: FittedModel, X_star: np.ndarray, with_covariance: bool = False, variance: bool = True
) -> Posterior:
    """
    Posterior mean Φ*α′ and covariance Φ*GΦ*ᵀ at ``X_star``.

    ``variance`` without ``with_covariance`` returns only the diagonal.
    """
    return predict_derivative(model, X_star, 0, with_covariance, variance)


def predict_derivative(
    model: FittedModel, X_star: np.ndarray, k: int, with_covariance: bool = False, variance: bool = True
) -> Posterior:
    """
    Posterior of the k-th input derivative, with respect to raw inputs.
    """
    if k < 0:
        raise ValueError(f"derivative order must be non-negative, got {k}")
    u = normalized_inputs(model.basis, model.transform, X_star)
    tolerance = EXTRAPOLATION_SLACK
    phi = phi_matrix(model.basis, u, k, tolerance)
    mean, covariance, variance_diag = _project(
        phi, model.alpha_prime, model.G, with_covariance, variance, model.transform.derivative_factor(k)
    )
    return Posterior(mean=mean, covariance=covariance, variance=variance_diag, derivative_order=k)


def _check_names(basis: MercerBasis, names: Iterable[str], homoscedastic: bool) -> None:
    kernel = kernel_of(basis.params)
    for name in names:
        if name == OUTPUT_SCALE:
            continue
        if name == NOISE:
            if not homoscedastic:
                raise ParameterError("Per-point noise variances are fixed and have no gradient.")
            continue
        kernel.check_param(name)


def _noise_grad(stats: SufficientStatistics, post: WeightPosterior, basis: MercerBasis, noise_scale: float) -> float:
    phi_phi, y_phi = stats.truncated(basis.n)
    alpha = post.alpha
    residual = stats.y_y - 2.0 * alpha @ y_phi + alpha @ phi_phi @ alpha
    trace = stats.n_samples / noise_scale - np.sum(post.G * phi_phi) / noise_scale**2
    return float(0.5 * residual / noise_scale**2 - 0.5 * trace)


def _eigenvalue_grad(post: WeightPosterior, d_lam: np.ndarray, trace_diag: np.ndarray, p: np.ndarray) -> float:
    # ½ pᵀ dΛ p − ½ tr(dΛ (A − AGA))
    return float(0.5 * p @ (d_lam * p) - 0.5 * trace_diag @ d_lam)


def fast_lml_and_grads(
    stats: SufficientStatistics,
    basis: MercerBasis,
    names: Iterable[str],
    noise_scale: Optional[float] = None,
    output_scale: float = 1.0,
) -> Tuple[float, Dict[str, float]]:
    """
    LML and gradients for eigenvalue-only parameters from cached statistics.

    Cost is independent of the number of samples.

    Raises
    ------
    ParameterError
        If a parameter also appears in the eigenfunctions.
    """
    names = list(names)
    kernel = kernel_of(basis.params)
    _check_names(basis, names, stats.homoscedastic)
    allowed = kernel.eigenvalue_only | {NOISE, OUTPUT_SCALE}
    for name in names:
        if name not in allowed:
            raise ParameterError(
                f"Parameter '{name}' appears in the eigenfunctions of '{kernel.name}'; use the general gradient."
            )
    noise_scale = stats.noise_scale if noise_scale is None else noise_scale
    post = _posterior(stats, basis, noise_scale, output_scale)
    p = post.residual_projection
    trace_diag = np.diag(post.trace_matrix)
    grads = {}
    for name in names:
        if name == NOISE:
            grads[name] = _noise_grad(stats, post, basis, noise_scale)
        elif name == OUTPUT_SCALE:
            grads[name] = _eigenvalue_grad(post, basis.lam, trace_diag, p)
        else:
            grads[name] = _eigenvalue_grad(post, output_scale * lambda_grad(basis, name), trace_diag, p)
    return post.lml, grads


def lml_grad_fast(
    cached: SufficientStatistics,
    basis: MercerBasis,
    param_name: str,
    noise_scale: Optional[float] = None,
    output_scale: float = 1.0,
) -> float:
    """Gradient of the LML for an eigenvalue-only parameter from cached statistics."""
    return fast_lml_and_grads(cached, basis, [param_name], noise_scale, output_scale)[1][param_name]


def lml_and_grads(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    names: Iterable[str] = (),
    output_scale: float = 1.0,
    chunk_rows: int = CHUNK_ROWS,
) -> Tuple[float, Dict[str, float]]:
    """
    LML and its gradients using the eigenfunction gradients where needed.

    Trace terms are rearranged into n x n and N x n blocks; a second pass over
    the data accumulates ΦᵀΣ⁻¹∂Φ and ∂Φᵀv with v = Σ⁻¹(Y − Φα′).
    """
    names = list(names)
    _check_nonempty(dataset)
    params = resolve_params(kind, params)
    basis = make_basis(kind, params, n)
    _check_names(basis, names, dataset.homoscedastic)
    transform = InputTransform.from_data(dataset.X)
    stats = compute_statistics(dataset, basis, transform, chunk_rows)
    post = _posterior(stats, basis, stats.noise_scale, output_scale)
    if not names:
        return post.lml, {}

    lam = output_scale * basis.lam
    p = post.residual_projection
    trace_diag = np.diag(post.trace_matrix)
    kernel = kernel_of(params)
    moving = [name for name in names if name in kernel.hyperparameters and name not in kernel.eigenvalue_only]
    cross = {name: np.zeros((basis.n, basis.n)) for name in moving}
    q = {name: np.zeros(basis.n) for name in moving}
    if moving:
        u = transform.apply(dataset.X)
        precision, noise_scale = _noise_split(dataset)
        for rows in _chunks(dataset.n_samples, chunk_rows):
            phi = phi_matrix(basis, u[rows])
            weights = precision[rows] / noise_scale
            v = weights * (dataset.Y[rows] - phi @ post.alpha)
            weighted = phi * weights[:, None]
            for name in moving:
                d_phi = phi_grad_matrix(basis, u[rows], name)
                cross[name] += weighted.T @ d_phi
                q[name] += d_phi.T @ v

    grads = {}
    for name in names:
        if name == NOISE:
            grads[name] = _noise_grad(stats, post, basis, stats.noise_scale)
        elif name == OUTPUT_SCALE:
            grads[name] = _eigenvalue_grad(post, basis.lam, trace_diag, p)
        else:
            value = _eigenvalue_grad(post, output_scale * lambda_grad(basis, name), trace_diag, p)
            if name in cross:
                # ½ (2 qᵀΛp) − ½ (2 tr(G ΦᵀΣ⁻¹∂Φ))
                value += float(q[name] @ (lam * p) - np.sum(post.G * cross[name].T))
            grads[name] = value
    return post.lml, grads


def log_marginal_likelihood(
    dataset: Dataset, kind: Union[KernelKind, str], params, n: int, output_scale: float = 1.0
) -> float:
    """
    log p(Y) under the rank-n kernel, via the Woodbury form and the determinant lemma.
    """
    return lml_and_grads(dataset, kind, params, n, (), output_scale)[0]


def lml_grad_general(
    dataset: Dataset, kind: Union[KernelKind, str], params, n: int, param_name: str, output_scale: float = 1.0
) -> float:
    """Gradient of the LML with respect to one parameter."""
    return lml_and_grads(dataset, kind, params, n, [param_name], output_scale)[1][param_name]
