"""
Multi-output approximate GP with covariance K_f ⊗ (ΦΛΦᵀ) + Σ_NM.

Weights are stacked output-major (index j * n + i). Kronecker products with
the identity are applied blockwise; the NM x NM covariance is never formed.
Missing observations drop out through zero rows and columns of the per-sample
noise precision.
"""

from abc import ABC, abstractmethod
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import LinAlgError, eigh

from famgp.config import CHUNK_ROWS, EXACT_MAX_NM, EXTRAPOLATION_SLACK
from famgp.core import NOISE, WeightPosterior, normalized_inputs
from famgp.exceptions import (
    DimensionMismatchError,
    EmptyDatasetError,
    FallbackWarning,
    SizeGuardError,
    warn,
)
from famgp.kernels import kernel_of, lambda_grad, make_basis, phi_grad_matrix, phi_matrix, resolve_params
from famgp.linalg import jittered_cholesky, spd_sqrt, symmetrize
from famgp.models import (
    CoregionalizationMatrix,
    FloatArray,
    InputTransform,
    KernelKind,
    MercerBasis,
    MODataset,
    MOFittedModel,
    Posterior,
)
from famgp.utils import logger


def as_coregionalization(K_f) -> CoregionalizationMatrix:
    if isinstance(K_f, CoregionalizationMatrix):
        return K_f
    return CoregionalizationMatrix.from_kf(K_f)


def commutation_matrix(M: int) -> np.ndarray:
    """Permutation T with T vec(A) = vec(Aᵀ) for every M x M matrix A (column-major vec)."""
    if M < 1:
        raise ValueError(f"dimension must be at least 1, got {M}")
    T = np.zeros((M * M, M * M))
    for i in range(M):
        for j in range(M):
            T[j * M + i, i * M + j] = 1.0
    return T


def block_precisions(dataset: MODataset) -> Tuple[np.ndarray, float, int]:
    """
    Per-sample noise precisions, shape (N, M, M), with missing outputs zeroed.

    Returns the precisions, log|Σ| over observed entries and the observed count.
    """
    N, M = dataset.Y.shape
    observed = dataset.observed
    if dataset.noise_kind == "per-entry":
        variances = np.where(observed, dataset.noise, 1.0)
        precision = np.zeros((N, M, M))
        index = np.arange(M)
        precision[:, index, index] = np.where(observed, 1.0 / variances, 0.0)
        return precision, float(np.sum(np.log(variances))), int(observed.sum())
    if dataset.noise_kind == "separable":
        covariance = np.broadcast_to(dataset.noise, (N, M, M)).copy()
    elif dataset.noise_kind == "per-sample":
        covariance = np.array(dataset.noise, dtype=float)
    else:
        raise ValueError("full noise has no per-sample block form")
    # Missing rows and columns become identity, so inverting yields the observed block's inverse.
    pair_mask = observed[:, :, None] & observed[:, None, :]
    identity = np.broadcast_to(np.eye(M), (N, M, M))
    covariance = np.where(pair_mask, covariance, identity)
    sign, log_det = np.linalg.slogdet(covariance)
    precision = np.linalg.inv(covariance) * pair_mask
    return precision, float(np.sum(log_det)), int(observed.sum())


class MOStatistics(BaseModel):
    """
    Data statistics under the base noise, with Σ = noise_scale * Σ₀.

    Attributes
    ----------
    A : np.ndarray
        (I ⊗ Φ)ᵀ Σ₀⁻¹ (I ⊗ Φ), shape (nM, nM).
    b : np.ndarray
        (I ⊗ Φ)ᵀ Σ₀⁻¹ y, shape (nM,).
    y_y : float
    log_det_noise : float
    count : int
        Number of observed entries.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A: FloatArray
    b: FloatArray
    y_y: float
    log_det_noise: float
    count: int


def _chunks(count: int, chunk_rows: int):
    for start in range(0, count, chunk_rows):
        yield slice(start, min(start + chunk_rows, count))


def _filled(dataset: MODataset) -> np.ndarray:
    return np.where(dataset.observed, dataset.Y, 0.0)


def _check_dense_size(dataset: MODataset) -> None:
    size = dataset.n_samples * dataset.n_outputs
    if size > EXACT_MAX_NM:
        raise SizeGuardError(f"Full noise needs a dense {size}x{size} factorization, above the guard {EXACT_MAX_NM}")


class _DenseNoise:
    """Observed-entry view of a full NM x NM noise covariance."""

    def __init__(self, dataset: MODataset):
        _check_dense_size(dataset)
        self.mask = dataset.observed.T.reshape(-1)
        self.y = dataset.vectorized()[self.mask]
        covariance = dataset.noise[np.ix_(self.mask, self.mask)]
        self.chol = jittered_cholesky(covariance, "noise")

    def design(self, phi: np.ndarray, M: int) -> np.ndarray:
        return np.kron(np.eye(M), phi)[self.mask]


def mo_statistics(
    dataset: MODataset, basis: MercerBasis, transform: InputTransform, chunk_rows: int = CHUNK_ROWS
) -> MOStatistics:
    """Accumulate the multi-output statistics over row chunks."""
    N, M = dataset.Y.shape
    n = basis.n
    u = transform.apply(dataset.X)
    if dataset.noise_kind == "full":
        dense = _DenseNoise(dataset)
        design = dense.design(phi_matrix(basis, u), M)
        weighted = dense.chol.solve(design)
        A = design.T @ weighted
        b = weighted.T @ dense.y
        y_y = float(dense.y @ dense.chol.solve(dense.y))
        return MOStatistics(A=symmetrize(A), b=b, y_y=y_y, log_det_noise=dense.chol.log_det(), count=dense.y.size)

    precision, log_det, count = block_precisions(dataset)
    Y = _filled(dataset)
    A = np.zeros((M * n, M * n))
    b = np.zeros(M * n)
    y_y = 0.0
    for rows in _chunks(N, chunk_rows):
        phi = phi_matrix(basis, u[rows])
        P = precision[rows]
        r = np.einsum("ijl,il->ij", P, Y[rows])
        y_y += float(np.sum(r * Y[rows]))
        for j in range(M):
            b[j * n : (j + 1) * n] += phi.T @ r[:, j]
            for l in range(j, M):
                block = phi.T @ (phi * P[:, j, l, None])
                A[j * n : (j + 1) * n, l * n : (l + 1) * n] += block
                if l != j:
                    A[l * n : (l + 1) * n, j * n : (j + 1) * n] += block.T
    return MOStatistics(A=symmetrize(A), b=b, y_y=y_y, log_det_noise=log_det, count=count)


def kron_root(coreg: CoregionalizationMatrix, basis: MercerBasis) -> np.ndarray:
    """R = L ⊗ Λ^½ with R Rᵀ = K_f ⊗ Λ."""
    return np.kron(coreg.L, np.diag(np.sqrt(basis.lam)))


def _mo_posterior(stats: MOStatistics, basis: MercerBasis, coreg: CoregionalizationMatrix, noise_scale: float):
    return WeightPosterior(
        A=stats.A / noise_scale,
        b=stats.b / noise_scale,
        y_y=stats.y_y / noise_scale,
        log_det_noise=stats.log_det_noise + stats.count * np.log(noise_scale),
        count=stats.count,
        root=kron_root(coreg, basis),
    )


class KroneckerInverse(ABC):
    """Representation of G = (K_f⁻¹ ⊗ Λ⁻¹ + S⁻¹ ⊗ ΦᵀΦ)⁻¹."""

    M: int
    n: int

    @abstractmethod
    def apply(self, V: np.ndarray) -> np.ndarray:
        """G @ V for a vector or matrix with nM rows."""

    @abstractmethod
    def dense(self) -> np.ndarray:
        """G as an nM x nM matrix."""

    @abstractmethod
    def log_det_b(self) -> float:
        """log|I + Rᵀ(S⁻¹ ⊗ ΦᵀΦ)R|."""


class SeparableInverse(KroneckerInverse):
    """
    G = (W_a ⊗ W_b) diag(d_a / (1 + d_a ⊗ d_b)) (W_a ⊗ W_b)ᵀ.

    W_a = S^½ Q_a from the eigenpairs (d_a, Q_a) of S^-½ K_f S^-½ and
    W_b = Λ^½ Q_b from the eigenpairs (d_b, Q_b) of Λ^½ ΦᵀΦ Λ^½.
    """

    def __init__(self, W_a, d_a, W_b, d_b):
        self.W_a, self.d_a, self.W_b, self.d_b = W_a, d_a, W_b, d_b
        self.M, self.n = W_a.shape[0], W_b.shape[0]
        self.middle = 1.0 + np.outer(d_a, d_b)
        self.scale = d_a[:, None] / self.middle

    def apply(self, V):
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            X = V.reshape(self.M, self.n)
            Z = (self.W_a.T @ X @ self.W_b) * self.scale
            return (self.W_a @ Z @ self.W_b.T).reshape(-1)
        return np.column_stack([self.apply(column) for column in V.T])

    def dense(self):
        W = np.kron(self.W_a, self.W_b)
        return symmetrize((W * self.scale.reshape(-1)) @ W.T)

    def log_det_b(self):
        return float(np.sum(np.log(self.middle)))


class DirectInverse(KroneckerInverse):
    """Direct Cholesky solve of the nM x nM system."""

    def __init__(self, posterior: WeightPosterior, M: int, n: int):
        self.posterior = posterior
        self.M, self.n = M, n

    def apply(self, V):
        return self.posterior.G @ V

    def dense(self):
        return self.posterior.G

    def log_det_b(self):
        return self.posterior.chol.log_det()


def mo_inverse_separable(
    S_M: np.ndarray,
    K_f,
    Phi: Optional[np.ndarray],
    Lambda: np.ndarray,
    phi_gram: Optional[np.ndarray] = None,
) -> KroneckerInverse:
    """
    Factored inverse for separable noise S_M ⊗ I_N from two small eigendecompositions.

    ``phi_gram`` (ΦᵀΦ) may be passed instead of ``Phi``. If an eigendecomposition
    fails the nM x nM system is solved directly, with a warning.
    """
    coreg = as_coregionalization(K_f)
    S_M = np.atleast_2d(np.asarray(S_M, dtype=float))
    Lambda = np.asarray(Lambda, dtype=float)
    gram = phi_gram if phi_gram is not None else Phi.T @ Phi
    M, n = S_M.shape[0], Lambda.size
    if coreg.M != M or gram.shape != (n, n):
        raise DimensionMismatchError(
            f"S_M is {S_M.shape}, K_f is {coreg.M}x{coreg.M}, ΦᵀΦ is {gram.shape} for {n} eigenvalues"
        )
    try:
        root, inv_root = spd_sqrt(S_M)
        d_a, Q_a = eigh(symmetrize(inv_root @ coreg.K_f @ inv_root))
        lam_root = np.sqrt(Lambda)
        d_b, Q_b = eigh(symmetrize(lam_root[:, None] * gram * lam_root[None, :]))
    except LinAlgError as e:
        warn(f"Eigendecomposition failed ({e}); solving the {n * M}x{n * M} system directly", FallbackWarning)
        A = np.kron(np.linalg.inv(S_M), gram)
        posterior = WeightPosterior(A, np.zeros(n * M), 0.0, 0.0, 0, np.kron(coreg.L, np.diag(np.sqrt(Lambda))))
        return DirectInverse(posterior, M, n)
    # Both symmetrized problems are PSD; clip round-off below zero.
    d_a, d_b = np.clip(d_a, 0.0, None), np.clip(d_b, 0.0, None)
    return SeparableInverse(root @ Q_a, d_a, lam_root[:, None] * Q_b, d_b)


def _prepare(dataset: MODataset, kind, params, n: int, K_f):
    if dataset.n_samples == 0 or not np.any(dataset.observed):
        raise EmptyDatasetError("The dataset has no observations.")
    coreg = as_coregionalization(K_f)
    if coreg.M != dataset.n_outputs:
        raise DimensionMismatchError(f"K_f is {coreg.M}x{coreg.M} but the dataset has {dataset.n_outputs} outputs")
    params = resolve_params(kind, params)
    basis = make_basis(kind, params, n)
    transform = InputTransform.from_data(dataset.X)
    return coreg, basis, transform


def _separable_from_stats(
    dataset: MODataset, stats: MOStatistics, basis: MercerBasis, coreg: CoregionalizationMatrix, noise_scale: float
) -> KroneckerInverse:
    # Complete separable noise gives A = S⁻¹ ⊗ ΦᵀΦ.
    n = basis.n
    gram = stats.A[:n, :n] / np.linalg.inv(dataset.noise)[0, 0]
    return mo_inverse_separable(noise_scale * dataset.noise, coreg, None, basis.lam, phi_gram=gram)


def mo_fit(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    K_f,
    noise_scale: float = 1.0,
    separable: Optional[bool] = None,
    chunk_rows: int = CHUNK_ROWS,
) -> MOFittedModel:
    """
    Condition the multi-output model on ``dataset``.

    Complete data with separable noise uses the eigendecomposition inverse unless
    ``separable`` is False; everything else factorizes the nM x nM system.

    Raises
    ------
    EmptyDatasetError
        If nothing is observed.
    DimensionMismatchError
        If K_f does not match the number of outputs.
    SizeGuardError
        Full noise above the dense size guard.
    """
    coreg, basis, transform = _prepare(dataset, kind, params, n, K_f)
    stats = mo_statistics(dataset, basis, transform, chunk_rows)
    use_separable = dataset.noise_kind == "separable" and dataset.complete and separable is not False
    if use_separable:
        inverse = _separable_from_stats(dataset, stats, basis, coreg, noise_scale)
        G = inverse.dense()
        alpha = inverse.apply(stats.b / noise_scale)
    else:
        post = _mo_posterior(stats, basis, coreg, noise_scale)
        G, alpha = post.G, post.alpha
    logger.info(
        f"Fitted {coreg.M}-output '{basis.kind.value}' model on {dataset.n_samples} samples "
        f"with n={basis.n} (separable solve: {use_separable})"
    )
    return MOFittedModel(
        basis=basis,
        transform=transform,
        coregionalization=coreg,
        alpha_prime=alpha,
        G=G,
        noise_kind=dataset.noise_kind,
        noise=dataset.noise,
        noise_scale=noise_scale,
    )


def check_outputs(outputs: Optional[Sequence[int]], M: int) -> Tuple[int, ...]:
    outputs = tuple(range(M)) if outputs is None else tuple(int(j) for j in outputs)
    if not outputs:
        raise ValueError("at least one output must be requested")
    for j in outputs:
        if not 0 <= j < M:
            raise DimensionMismatchError(f"output index {j} outside 0..{M - 1}")
    return outputs


def mo_predict(
    model: MOFittedModel,
    X_star: np.ndarray,
    outputs: Optional[Sequence[int]] = None,
    with_covariance: bool = False,
    variance: bool = True,
    k: int = 0,
) -> Posterior:
    """
    Joint posterior of the requested outputs (or their k-th input derivative) at ``X_star``.

    The mean is stacked output-major in the order of ``outputs``; the covariance
    includes cross-output blocks.
    """
    if k < 0:
        raise ValueError(f"derivative order must be non-negative, got {k}")
    M, n = model.n_outputs, model.basis.n
    outputs = check_outputs(outputs, M)
    u = normalized_inputs(model.basis, model.transform, X_star)
    phi = phi_matrix(model.basis, u, k, EXTRAPOLATION_SLACK)
    factor = model.transform.derivative_factor(k)
    weights = model.alpha_prime.reshape(M, n)
    mean = factor * np.concatenate([phi @ weights[j] for j in outputs])
    covariance = variance_diag = None
    G = model.G
    if with_covariance:
        blocks = [
            [phi @ G[j * n : (j + 1) * n, l * n : (l + 1) * n] @ phi.T for l in outputs] for j in outputs
        ]
        covariance = factor**2 * symmetrize(np.block(blocks))
    elif variance:
        variance_diag = factor**2 * np.concatenate(
            [np.einsum("ij,jk,ik->i", phi, G[j * n : (j + 1) * n, j * n : (j + 1) * n], phi) for j in outputs]
        )
    return Posterior(mean=mean, covariance=covariance, variance=variance_diag, derivative_order=k, outputs=outputs)


def _diagonal_blocks(H: np.ndarray, M: int, n: int) -> np.ndarray:
    """D[a, b, i] = H[a n + i, b n + i]."""
    return np.einsum("aibi->abi", H.reshape(M, n, M, n))


def _kf_gradient(post: WeightPosterior, lam: np.ndarray, L: np.ndarray) -> np.ndarray:
    M, n = L.shape[0], lam.size
    P = post.residual_projection.reshape(M, n)
    Q = (P * lam) @ P.T
    T = _diagonal_blocks(post.trace_matrix, M, n) @ lam
    return np.tril((Q - T) @ L)


def _scale_grad(stats: MOStatistics, post: WeightPosterior, noise_scale: float) -> float:
    alpha = post.alpha
    residual = stats.y_y - 2.0 * alpha @ stats.b + alpha @ stats.A @ alpha
    trace = stats.count / noise_scale - np.sum(post.G * stats.A) / noise_scale**2
    return float(0.5 * residual / noise_scale**2 - 0.5 * trace)


def _residual_pass(
    dataset: MODataset,
    basis: MercerBasis,
    transform: InputTransform,
    alpha: np.ndarray,
    noise_scale: float,
    names: Sequence[str],
    chunk_rows: int,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Accumulate C = ΨᵀΣ⁻¹∂Ψ and q = ∂Ψᵀ v with v = Σ⁻¹(y − Ψα′) for each name."""
    M, n = dataset.n_outputs, basis.n
    u = transform.apply(dataset.X)
    cross = {name: np.zeros((M * n, M * n)) for name in names}
    q = {name: np.zeros(M * n) for name in names}
    if dataset.noise_kind == "full":
        dense = _DenseNoise(dataset)
        design = dense.design(phi_matrix(basis, u), M)
        v = dense.chol.solve(dense.y - design @ alpha) / noise_scale
        weighted = dense.chol.solve(design) / noise_scale
        for name in names:
            d_design = dense.design(phi_grad_matrix(basis, u, name), M)
            cross[name] = weighted.T @ d_design
            q[name] = d_design.T @ v
        return cross, q

    precision, _, _ = block_precisions(dataset)
    Y = _filled(dataset)
    weights = alpha.reshape(M, n)
    for rows in _chunks(dataset.n_samples, chunk_rows):
        phi = phi_matrix(basis, u[rows])
        P = precision[rows] / noise_scale
        v = np.einsum("ijl,il->ij", P, Y[rows] - phi @ weights.T)
        for name in names:
            d_phi = phi_grad_matrix(basis, u[rows], name)
            for j in range(M):
                q[name][j * n : (j + 1) * n] += d_phi.T @ v[:, j]
                for l in range(M):
                    cross[name][j * n : (j + 1) * n, l * n : (l + 1) * n] += phi.T @ (d_phi * P[:, j, l, None])
    return cross, q


def mo_lml_and_grads(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    K_f,
    noise_scale: float = 1.0,
    names: Iterable[str] = (),
    with_kf: bool = True,
    chunk_rows: int = CHUNK_ROWS,
) -> Tuple[float, Dict[str, float], Optional[np.ndarray]]:
    """
    Multi-output LML with gradients for kernel parameters, the noise scale and L.

    ``names`` may hold kernel hyperparameters and ``noise_variance``, the latter
    meaning the multiplier on the given noise covariance. The gradient with
    respect to the Cholesky factor L of K_f is lower triangular.
    """
    names = list(names)
    coreg, basis, transform = _prepare(dataset, kind, params, n, K_f)
    n = basis.n
    kernel = kernel_of(basis.params)
    for name in names:
        if name != NOISE:
            kernel.check_param(name)
    stats = mo_statistics(dataset, basis, transform, chunk_rows)
    post = _mo_posterior(stats, basis, coreg, noise_scale)
    M, lam = coreg.M, basis.lam
    K = coreg.K_f
    grads: Dict[str, float] = {}
    moving = [name for name in names if name in kernel.hyperparameters and name not in kernel.eigenvalue_only]
    cross, q = {}, {}
    if moving:
        cross, q = _residual_pass(dataset, basis, transform, post.alpha, noise_scale, moving, chunk_rows)
    P = post.residual_projection.reshape(M, n)
    D = _diagonal_blocks(post.trace_matrix, M, n)
    for name in names:
        if name == NOISE:
            grads[name] = _scale_grad(stats, post, noise_scale)
            continue
        d_lam = lambda_grad(basis, name)
        quad = np.sum(K * ((P * d_lam) @ P.T))
        trace = np.sum(K * (D @ d_lam))
        if name in cross:
            Qm = q[name].reshape(M, n)
            quad += 2.0 * np.sum(K * ((Qm * lam) @ P.T))
            trace += 2.0 * np.sum(post.G * cross[name].T)
        grads[name] = float(0.5 * (quad - trace))
    kf = _kf_gradient(post, lam, coreg.L) if with_kf else None
    return post.lml, grads, kf


def mo_log_marginal_likelihood(
    dataset: MODataset, kind: Union[KernelKind, str], params, n: int, K_f, noise_scale: float = 1.0
) -> float:
    return mo_lml_and_grads(dataset, kind, params, n, K_f, noise_scale, (), with_kf=False)[0]


def kf_grad(dataset: MODataset, model: MOFittedModel, L: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Gradient of the LML with respect to the Cholesky factor L of K_f = LLᵀ.

    Evaluated at ``L`` (default: the model's own factor) with the model's basis,
    input transform and noise scale. Only the lower triangle is non-zero.
    """
    coreg = model.coregionalization if L is None else CoregionalizationMatrix(L=np.tril(L))
    if coreg.M != dataset.n_outputs:
        raise DimensionMismatchError(f"L is {coreg.M}x{coreg.M} but the dataset has {dataset.n_outputs} outputs")
    stats = mo_statistics(dataset, model.basis, model.transform)
    post = _mo_posterior(stats, model.basis, coreg, model.noise_scale)
    return _kf_gradient(post, model.basis.lam, coreg.L)
