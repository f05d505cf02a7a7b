from typing import Any, Dict, Optional, Union

import numpy as np

from famgp.config import EIGENVALUE_FLOOR
from famgp.exceptions import (
    BasisOverflowError,
    EigenvalueFloorWarning,
    EigenvalueUnderflowError,
    ParameterError,
    warn,
)
from famgp.mercer import MercerKernel
from famgp.models import BasisMatrix, KernelKind, MercerBasis, parse_params
from famgp.registry import kernel_registry
from famgp.utils import logger

ParamsLike = Union[Any, Dict[str, Any]]


def resolve_params(kind: Union[KernelKind, str], params: ParamsLike):
    """Validate ``params`` (model or mapping) against ``kind``."""
    kind = KernelKind(kind)
    if isinstance(params, dict):
        return parse_params(kind, params)
    if KernelKind(params.kind) != kind:
        raise ParameterError(f"Parameters of kind '{params.kind}' do not match kernel '{kind.value}'.")
    return params


def kernel_of(params) -> MercerKernel:
    return kernel_registry.get(params.kind)


def kernel_eval(kind: Union[KernelKind, str], params: ParamsLike, x, x2):
    """
    Closed-form kernel value k(x, x2).

    Raises
    ------
    DomainError
        Chebyshev inputs outside [-1, 1].
    """
    params = resolve_params(kind, params)
    value = kernel_of(params).evaluate(params, np.asarray(x, dtype=float), np.asarray(x2, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def kernel_matrix(params, X: np.ndarray, X2: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense closed-form Gram matrix between ``X`` and ``X2``."""
    X = np.asarray(X, dtype=float)
    X2 = X if X2 is None else np.asarray(X2, dtype=float)
    return kernel_of(params).evaluate(params, X[:, None], X2[None, :])


def kernel_matrix_grad(params, X: np.ndarray, X2: Optional[np.ndarray], name: str) -> np.ndarray:
    """Gradient of the closed-form Gram matrix with respect to a hyperparameter."""
    X = np.asarray(X, dtype=float)
    X2 = X if X2 is None else np.asarray(X2, dtype=float)
    return kernel_of(params).kernel_grad(params, X[:, None], X2[None, :], name)


def make_basis(
    kind: Union[KernelKind, str], params: ParamsLike, n: int, floor: float = EIGENVALUE_FLOOR
) -> MercerBasis:
    """
    Truncated Mercer expansion with ``n`` eigenpairs.

    Eigenvalues below ``floor`` times the largest one end the expansion early;
    a leading eigenvalue below the floor is clamped to it. Both events warn.

    Raises
    ------
    EigenvalueUnderflowError
        If every eigenvalue beyond index 0 is below the floor.
    """
    params = resolve_params(kind, params)
    kernel = kernel_of(params)
    kernel.check_n(n)
    lam = np.asarray(kernel.eigenvalues(params, n), dtype=float)
    if not np.all(np.isfinite(lam)):
        raise EigenvalueUnderflowError(f"Non-finite eigenvalues for {params!r}")
    threshold = floor * float(np.max(lam))
    below = lam < threshold
    if n > 1 and np.all(below[1:]):
        raise EigenvalueUnderflowError(
            f"All {n - 1} eigenvalues beyond the first fall below {threshold:.3g} for {params!r}"
        )
    keep = n
    first_below = np.flatnonzero(below[1:])
    if first_below.size:
        keep = kernel.retained_count(int(first_below[0]) + 1)
        warn(
            f"Eigenvalue floor reduced the expansion of '{kernel.name}' from {n} to {keep} terms",
            EigenvalueFloorWarning,
        )
    lam = lam[:keep].copy()
    if lam[0] < threshold:
        warn(f"Leading eigenvalue {lam[0]:.3g} clamped to the floor {threshold:.3g}", EigenvalueFloorWarning)
        lam[0] = threshold
    return MercerBasis(params=params, n=keep, requested_n=n, lam=lam)


def phi_matrix(basis: MercerBasis, X: np.ndarray, k: int = 0, tolerance: float = 0.0) -> np.ndarray:
    """Raw k-th derivative eigenfunction matrix, shape (N, n)."""
    if k < 0:
        raise ValueError(f"derivative order must be non-negative, got {k}")
    kernel = kernel_of(basis.params)
    X = np.asarray(X, dtype=float).reshape(-1)
    kernel.check_inputs(X, tolerance)
    values = kernel.eigenfunctions(basis.params, X, basis.n, k)
    if not np.all(np.isfinite(values)):
        raise BasisOverflowError(f"Non-finite eigenfunction values of order {k} for '{kernel.name}'")
    return values


def phi_grad_matrix(basis: MercerBasis, X: np.ndarray, name: str) -> np.ndarray:
    """Raw gradient of the eigenfunction matrix with respect to ``name``."""
    kernel = kernel_of(basis.params)
    return kernel.eigenfunction_grad(basis.params, np.asarray(X, dtype=float).reshape(-1), basis.n, name)


def basis_matrix(basis: MercerBasis, X: np.ndarray, tolerance: float = 0.0) -> BasisMatrix:
    """Eigenfunctions at ``X``, entry (i, j) = φ_j(x_i)."""
    return BasisMatrix(values=phi_matrix(basis, X, 0, tolerance), derivative_order=0)


def basis_derivative(basis: MercerBasis, X: np.ndarray, k: int, tolerance: float = 0.0) -> BasisMatrix:
    """k-th input derivative of the eigenfunctions at ``X``."""
    if k < 1:
        raise ValueError(f"derivative order must be at least 1, got {k}")
    return BasisMatrix(values=phi_matrix(basis, X, k, tolerance), derivative_order=k)


def lambda_grad(basis: MercerBasis, param_name: str) -> np.ndarray:
    """Gradient of the retained eigenvalues with respect to ``param_name``."""
    kernel = kernel_of(basis.params)
    kernel.check_param(param_name)
    return kernel.eigenvalue_grad(basis.params, basis.requested_n, param_name)[: basis.n]


def basis_matrix_grad(basis: MercerBasis, X: np.ndarray, param_name: str) -> BasisMatrix:
    """Gradient of the eigenfunction matrix with respect to ``param_name``."""
    return BasisMatrix(values=phi_grad_matrix(basis, X, param_name))


def reconstruct_kernel(basis: MercerBasis, X: np.ndarray, X2: Optional[np.ndarray] = None) -> np.ndarray:
    """Rank-n kernel Φ_X Λ Φ_X2ᵀ."""
    phi = phi_matrix(basis, X)
    phi2 = phi if X2 is None else phi_matrix(basis, X2)
    return (phi * basis.lam) @ phi2.T


def reconstruction_error(basis: MercerBasis, grid: np.ndarray) -> float:
    """Mean absolute difference between the expansion and the closed form on ``grid``."""
    exact = kernel_matrix(basis.params, grid)
    error = float(np.mean(np.abs(reconstruct_kernel(basis, grid) - exact)))
    logger.debug(f"Reconstruction error of '{basis.kind.value}' with n={basis.n}: {error:.3e}")
    return error


def eigenvalue_mass(basis: MercerBasis, reference_n: int = 401) -> float:
    """Share of the eigenvalue sum captured by the retained eigenvalues."""
    kernel = kernel_of(basis.params)
    reference_n = max(reference_n, basis.requested_n)
    if kernel.retained_count(reference_n) != reference_n:
        reference_n += 1
    total = float(np.sum(kernel.eigenvalues(basis.params, reference_n)))
    return float(np.sum(basis.lam)) / total
