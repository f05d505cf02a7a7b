"""
Closed-form kernels and their Mercer expansions.

Each family knows its kernel, its eigenvalues and eigenfunctions, the input
derivatives of the eigenfunctions and the hyperparameter gradients of both.
All inputs are in normalized units.
"""

import math
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import FrozenSet, Tuple

import numpy as np
from scipy.special import gammaln, ive

from famgp.exceptions import BasisOverflowError, DomainError, ParameterError
from famgp.models import ChebyshevParams, PeriodicParams, SquaredExponentialParams

_RESCALE_THRESHOLD = 1e100


class MercerKernel(ABC):
    """
    Interface of a kernel family with a closed-form Mercer expansion.

    Attributes
    ----------
    name : str
        Kernel kind the family is registered under.
    hyperparameters : tuple of str
        Trainable hyperparameter names.
    eigenvalue_only : frozenset of str
        Hyperparameters that appear in the eigenvalues but not in the eigenfunctions.
    """

    name: str = ""
    params_type: type = object
    hyperparameters: Tuple[str, ...] = ()
    eigenvalue_only: FrozenSet[str] = frozenset()

    def check_inputs(self, x: np.ndarray, tolerance: float = 0.0) -> None:
        """Raise DomainError for inputs outside the valid region. Unbounded by default."""

    def check_n(self, n: int) -> None:
        if n < 1:
            raise ValueError(f"truncation order must be at least 1, got {n}")

    def retained_count(self, count: int) -> int:
        """Largest valid truncation order not above ``count``."""
        return count

    def check_param(self, name: str) -> None:
        if name not in self.hyperparameters:
            raise ParameterError(
                f"Kernel '{self.name}' has no trainable parameter '{name}', "
                f"expected one of {list(self.hyperparameters)}."
            )

    @abstractmethod
    def evaluate(self, params, x: np.ndarray, x2: np.ndarray) -> np.ndarray:
        """Closed-form kernel, broadcast over ``x`` and ``x2``."""

    @abstractmethod
    def kernel_grad(self, params, x: np.ndarray, x2: np.ndarray, name: str) -> np.ndarray:
        """Gradient of the closed-form kernel with respect to a hyperparameter."""

    @abstractmethod
    def eigenvalues(self, params, n: int) -> np.ndarray:
        """The first ``n`` eigenvalues."""

    @abstractmethod
    def eigenvalue_grad(self, params, n: int, name: str) -> np.ndarray:
        """Gradient of the first ``n`` eigenvalues with respect to a hyperparameter."""

    @abstractmethod
    def eigenfunctions(self, params, x: np.ndarray, n: int, k: int = 0) -> np.ndarray:
        """k-th input derivative of the first ``n`` eigenfunctions, shape (N, n)."""

    @abstractmethod
    def eigenfunction_grad(self, params, x: np.ndarray, n: int, name: str) -> np.ndarray:
        """Gradient of the first ``n`` eigenfunctions with respect to a hyperparameter."""


def _combine(values: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore"):
        return np.sign(values) * np.exp(np.log(np.abs(values)) + log_scale)


def scaled_hermite(z: np.ndarray, n: int, log_envelope: np.ndarray) -> np.ndarray:
    """
    Normalized Hermite functions ``exp(log_envelope) * H_i(z) / sqrt(2^i i!)``.

    The three-term recurrence runs on rescaled values and keeps the magnitude
    as a separate log term, so columns stay finite for large ``n``.

    Raises
    ------
    BasisOverflowError
        If a value still exceeds the floating point range.
    """
    z = np.asarray(z, dtype=float)
    log_scale = np.broadcast_to(np.asarray(log_envelope, dtype=float), z.shape).copy()
    out = np.empty((z.size, n))
    previous = np.zeros_like(z)
    current = np.ones_like(z)
    out[:, 0] = np.exp(log_scale)
    for i in range(1, n):
        previous, current = current, np.sqrt(2.0 / i) * z * current - np.sqrt((i - 1) / i) * previous
        magnitude = np.maximum(np.abs(current), np.abs(previous))
        large = magnitude > _RESCALE_THRESHOLD
        if np.any(large):
            current[large] /= magnitude[large]
            previous[large] /= magnitude[large]
            log_scale[large] += np.log(magnitude[large])
        out[:, i] = _combine(current, log_scale)
    if not np.all(np.isfinite(out)):
        raise BasisOverflowError(f"Hermite functions overflow for n={n} at |z| up to {np.max(np.abs(z)):.3g}")
    return out


class SquaredExponentialKernel(MercerKernel):
    """
    Squared-exponential kernel exp(-(x - x')² / (2 l²)).

    The reference normalization uses sqrt(β / (2^i i!)) with envelope exp(-δ² x²)
    and Hermite argument αβx. The alternate normalization, sqrt(β / i!) with envelope
    exp(-α² x²) and argument sqrt(2)αβx, does not reconstruct the kernel and is kept
    for comparison only; it supports plain evaluation but no derivatives or gradients.
    """

    name = "squared-exponential"
    params_type = SquaredExponentialParams
    hyperparameters = ("l_se",)
    eigenvalue_only = frozenset()

    @staticmethod
    def constants(params: SquaredExponentialParams):
        alpha2 = params.alpha_se**2
        eta2 = 1.0 / (2.0 * params.l_se**2)
        root = 1.0 + 4.0 * eta2 / alpha2
        beta = root**0.25
        delta2 = alpha2 / 2.0 * (beta**2 - 1.0)
        denominator = alpha2 + delta2 + eta2
        return alpha2, eta2, beta, delta2, denominator, root

    def _constant_grads(self, params: SquaredExponentialParams):
        alpha2, eta2, beta, delta2, denominator, root = self.constants(params)
        d_eta2 = -1.0 / params.l_se**3
        d_beta = d_eta2 / alpha2 * root ** (-0.75)
        d_delta2 = alpha2 * beta * d_beta
        return d_eta2, d_beta, d_delta2

    def evaluate(self, params, x, x2):
        diff = np.subtract(x, x2)
        return np.exp(-(diff**2) / (2.0 * params.l_se**2))

    def kernel_grad(self, params, x, x2, name):
        self.check_param(name)
        r2 = np.subtract(x, x2) ** 2
        return self.evaluate(params, x, x2) * r2 / params.l_se**3

    def eigenvalues(self, params, n):
        alpha2, eta2, _, _, denominator, _ = self.constants(params)
        i = np.arange(n)
        return np.exp(0.5 * np.log(alpha2 / denominator) + i * np.log(eta2 / denominator))

    def eigenvalue_grad(self, params, n, name):
        self.check_param(name)
        _, eta2, _, _, denominator, _ = self.constants(params)
        d_eta2, _, d_delta2 = self._constant_grads(params)
        i = np.arange(n)
        d_denominator = d_delta2 + d_eta2
        return self.eigenvalues(params, n) * (i * d_eta2 / eta2 - (i + 0.5) * d_denominator / denominator)

    def _hermite_functions(self, params, x, n):
        """exp(-δ² x²) h_i(αβx) for the reference normalization."""
        alpha2, _, beta, delta2, _, _ = self.constants(params)
        x = np.asarray(x, dtype=float)
        return scaled_hermite(np.sqrt(alpha2) * beta * x, n, -delta2 * x**2)

    def _envelope_polynomials(self, delta2: float, x: np.ndarray, k: int) -> list:
        """P_m with d^m/dx^m exp(-δ² x²) = P_m exp(-δ² x²), m = 0..k."""
        polys = [np.ones_like(x)]
        if k >= 1:
            polys.append(-2.0 * delta2 * x)
        for m in range(1, k):
            polys.append(-2.0 * delta2 * x * polys[m] - 2.0 * m * delta2 * polys[m - 1])
        return polys

    def eigenfunctions(self, params, x, n, k=0):
        x = np.asarray(x, dtype=float)
        _, _, beta, delta2, _, _ = self.constants(params)
        if params.normalization == "alternate":
            if k:
                raise ParameterError("The alternate SE normalization supports plain evaluation only.")
            alpha = params.alpha_se
            values = scaled_hermite(np.sqrt(2.0) * alpha * beta * x, n, -(alpha**2) * x**2)
            return np.sqrt(beta) * values * 2.0 ** (np.arange(n) / 2.0)
        psi = self._hermite_functions(params, x, n)
        if k == 0:
            return np.sqrt(beta) * psi
        c = params.alpha_se * beta
        polys = self._envelope_polynomials(delta2, x, k)
        i = np.arange(n)
        out = np.zeros((x.size, n))
        for j in range(min(k, n - 1) + 1):
            # d^j/dx^j h_i(cx) = c^j sqrt(2^j i! / (i - j)!) h_{i-j}(cx)
            log_factor = 0.5 * (gammaln(i[j:] + 1) - gammaln(i[j:] - j + 1)) + j * np.log(c * np.sqrt(2.0))
            term = psi[:, : n - j] * np.exp(log_factor)
            out[:, j:] += math.comb(k, j) * polys[k - j][:, None] * term
        out *= np.sqrt(beta)
        if not np.all(np.isfinite(out)):
            raise BasisOverflowError(f"SE eigenfunction derivatives of order {k} overflow for n={n}")
        return out

    def eigenfunction_grad(self, params, x, n, name):
        self.check_param(name)
        if params.normalization == "alternate":
            raise ParameterError("The alternate SE normalization supports plain evaluation only.")
        x = np.asarray(x, dtype=float)
        _, _, beta, _, _, _ = self.constants(params)
        _, d_beta, d_delta2 = self._constant_grads(params)
        phi = self.eigenfunctions(params, x, n)
        out = (d_beta / (2.0 * beta) - d_delta2 * x**2)[:, None] * phi
        # Appell property: d/dz h_i = sqrt(2i) h_{i-1}
        i = np.arange(1, n)
        out[:, 1:] += np.sqrt(2.0 * i) * params.alpha_se * d_beta * x[:, None] * phi[:, :-1]
        return out


class PeriodicKernel(MercerKernel):
    """
    Periodic kernel exp(-2 sin²(f (x - x') / 2) / w²).

    Basis slots are [1, cos(f x), sin(f x), cos(2 f x), sin(2 f x), ...], so the
    truncation order counts slots and must be odd. Each cos/sin pair shares an eigenvalue.
    """

    name = "periodic"
    params_type = PeriodicParams
    hyperparameters = ("f_pr", "w_pr")
    eigenvalue_only = frozenset({"w_pr"})

    def check_n(self, n):
        super().check_n(n)
        if n % 2 == 0:
            raise ValueError(
                f"Periodic truncation order counts a constant slot plus cos/sin pairs and must be odd, got {n}"
            )

    def retained_count(self, count):
        return count if count % 2 == 1 else count - 1

    def evaluate(self, params, x, x2):
        diff = np.subtract(x, x2)
        return np.exp(-2.0 * np.sin(params.f_pr * diff / 2.0) ** 2 / params.w_pr**2)

    def kernel_grad(self, params, x, x2, name):
        self.check_param(name)
        diff = np.subtract(x, x2)
        value = self.evaluate(params, x, x2)
        if name == "w_pr":
            return value * 4.0 * np.sin(params.f_pr * diff / 2.0) ** 2 / params.w_pr**3
        return -value * diff * np.sin(params.f_pr * diff) / params.w_pr**2

    @staticmethod
    def _gaussian_factors(w: float, n: int):
        i = np.arange(1, n + 1)
        e = np.exp(-(i**2) * w**2 / 2.0)
        signs = (-1.0) ** (i - 1)
        odd = 2 * i - 1
        e_odd = np.exp(-(odd**2) * w**2 / 2.0)
        gamma = np.sum(signs * e)
        zeta = 2.0 * np.sum(e_odd)
        d_e = -w * i**2 * e
        d_gamma = np.sum(signs * d_e)
        d_zeta = 2.0 * np.sum(-w * odd**2 * e_odd)
        return e, gamma, zeta, d_e, d_gamma, d_zeta

    def eigenvalues(self, params, n):
        self.check_n(n)
        harmonics = (n - 1) // 2
        if params.coefficients == "bessel":
            z = 1.0 / params.w_pr**2
            h = np.arange(harmonics + 1)
            coefficients = ive(h, z)
            return np.concatenate(([coefficients[0]], np.repeat(2.0 * coefficients[1:], 2)))
        e, gamma, zeta, _, _, _ = self._gaussian_factors(params.w_pr, n)
        return np.concatenate(([gamma / zeta], np.repeat(e[:harmonics] / zeta, 2)))

    def eigenvalue_grad(self, params, n, name):
        self.check_param(name)
        self.check_n(n)
        if name == "f_pr":
            return np.zeros(n)
        harmonics = (n - 1) // 2
        w = params.w_pr
        if params.coefficients == "bessel":
            z = 1.0 / w**2
            h = np.arange(harmonics + 1)
            d_ive = 0.5 * (ive(np.abs(h - 1), z) + ive(h + 1, z)) - ive(h, z)
            d_coefficients = d_ive * (-2.0 / w**3)
            return np.concatenate(([d_coefficients[0]], np.repeat(2.0 * d_coefficients[1:], 2)))
        e, gamma, zeta, d_e, d_gamma, d_zeta = self._gaussian_factors(w, n)
        d_constant = d_gamma / zeta - gamma * d_zeta / zeta**2
        d_pairs = d_e[:harmonics] / zeta - e[:harmonics] * d_zeta / zeta**2
        return np.concatenate(([d_constant], np.repeat(d_pairs, 2)))

    def eigenfunctions(self, params, x, n, k=0):
        self.check_n(n)
        x = np.asarray(x, dtype=float)
        harmonics = (n - 1) // 2
        out = np.zeros((x.size, n))
        out[:, 0] = 1.0 if k == 0 else 0.0
        if harmonics == 0:
            return out
        frequency = np.arange(1, harmonics + 1) * params.f_pr
        phase = np.outer(x, frequency)
        cos, sin = np.cos(phase), np.sin(phase)
        # k-th derivative rotates each cos/sin pair by k quarter turns
        rotated = {0: (cos, sin), 1: (-sin, cos), 2: (-cos, -sin), 3: (sin, -cos)}[k % 4]
        scale = frequency**k
        out[:, 1::2] = rotated[0] * scale
        out[:, 2::2] = rotated[1] * scale
        return out

    def eigenfunction_grad(self, params, x, n, name):
        self.check_param(name)
        self.check_n(n)
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.size, n))
        harmonics = (n - 1) // 2
        if name == "w_pr" or harmonics == 0:
            return out
        h = np.arange(1, harmonics + 1)
        phase = np.outer(x, h * params.f_pr)
        hx = np.outer(x, h)
        out[:, 1::2] = -hx * np.sin(phase)
        out[:, 2::2] = hx * np.cos(phase)
        return out


@lru_cache(maxsize=64)
def chebyshev_derivative_coefficients(n: int, k: int) -> np.ndarray:
    """
    Matrix D with d^k T_i / dx^k = sum_m D[i, m] T_m for i, m < n.

    Built from the closed form in lower-degree Chebyshev polynomials using
    exact integer falling factorials and binomials.
    """
    D = np.zeros((n, n))
    for i in range(k, n):
        for j in range((i - k) // 2 + 1):
            D[i, i - k - 2 * j] += float(2**k * i * math.perm(i - 1 - j, k - 1) * math.comb(k + j - 1, k - 1))
        if (i - k) % 2 == 0:
            half = (i + k) // 2 - 1
            D[i, 0] -= float(2 ** (k - 1) * i * math.perm(half, k - 1) * math.comb(half, k - 1))
    D.setflags(write=False)
    return D


class ChebyshevKernel(MercerKernel):
    """Chebyshev kernel on [-1, 1]. Both hyperparameters appear only in the eigenvalues."""

    name = "chebyshev"
    params_type = ChebyshevParams
    hyperparameters = ("a", "b")
    eigenvalue_only = frozenset({"a", "b"})

    def check_inputs(self, x, tolerance=0.0):
        x = np.asarray(x, dtype=float)
        if x.size and np.max(np.abs(x)) > 1.0 + tolerance:
            raise DomainError(
                f"Chebyshev kernel inputs must lie in [-1, 1], got values up to {np.max(np.abs(x)):.6g}"
            )

    @staticmethod
    def _parts(params, x, x2):
        b = params.b
        s = np.square(x) + np.square(x2)
        p = np.multiply(x, x2)
        numerator = b * (1 - b**2) - 2 * b * s + (1 + 3 * b**2) * p
        denominator = (1 - b**2) ** 2 + 4 * b * (b * s - (1 + b**2) * p)
        return s, p, numerator, denominator

    def evaluate(self, params, x, x2):
        self.check_inputs(x)
        self.check_inputs(x2)
        _, _, numerator, denominator = self._parts(params, x, x2)
        return 1 - params.a + 2 * params.a * (1 - params.b) * numerator / denominator

    def kernel_grad(self, params, x, x2, name):
        self.check_param(name)
        a, b = params.a, params.b
        s, p, numerator, denominator = self._parts(params, x, x2)
        ratio = numerator / denominator
        if name == "a":
            return -1 + 2 * (1 - b) * ratio
        d_numerator = 1 - 3 * b**2 - 2 * s + 6 * b * p
        d_denominator = -4 * b * (1 - b**2) + 8 * b * s - 4 * p * (1 + 3 * b**2)
        d_ratio = (d_numerator * denominator - numerator * d_denominator) / denominator**2
        return 2 * a * (-ratio + (1 - b) * d_ratio)

    def eigenvalues(self, params, n):
        i = np.arange(1, n)
        return np.concatenate(([1 - params.a], params.a * (1 - params.b) * params.b ** (i - 1.0)))

    def eigenvalue_grad(self, params, n, name):
        self.check_param(name)
        a, b = params.a, params.b
        i = np.arange(1, n)
        if name == "a":
            return np.concatenate(([-1.0], (1 - b) * b ** (i - 1.0)))
        # d/db of a (1 - b) b^(i-1)
        tail = a * (-(b ** (i - 1.0)) + (1 - b) * (i - 1) * b ** np.maximum(i - 2.0, 0.0))
        return np.concatenate(([0.0], tail))

    @staticmethod
    def polynomials(x: np.ndarray, n: int) -> np.ndarray:
        """T_0..T_{n-1} by the three-term recurrence, shape (N, n)."""
        x = np.asarray(x, dtype=float)
        T = np.empty((x.size, n))
        T[:, 0] = 1.0
        if n > 1:
            T[:, 1] = x
        for i in range(2, n):
            T[:, i] = 2.0 * x * T[:, i - 1] - T[:, i - 2]
        return T

    def eigenfunctions(self, params, x, n, k=0):
        T = self.polynomials(x, n)
        if k:
            T = T @ chebyshev_derivative_coefficients(n, k).T
        T[:, 1:] *= np.sqrt(2.0)
        return T

    def eigenfunction_grad(self, params, x, n, name):
        self.check_param(name)
        return np.zeros((np.asarray(x).size, n))
