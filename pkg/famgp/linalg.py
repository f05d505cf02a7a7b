import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from famgp.config import JITTER_GROWTH, JITTER_MAX, JITTER_START
from famgp.exceptions import FactorizationError, JitterWarning, warn
from famgp.utils import logger


class Cholesky:
    """
    Lower Cholesky factorization of a symmetric positive definite matrix.

    Attributes
    ----------
    factor : tuple
        ``(c, lower)`` as returned by ``scipy.linalg.cho_factor``.
    jitter : float
        Diagonal term that was added, 0.0 when none was needed.
    """

    def __init__(self, factor, jitter: float = 0.0):
        self.factor = factor
        self.jitter = jitter

    @property
    def size(self) -> int:
        return self.factor[0].shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, rhs, check_finite=False)

    def inverse(self) -> np.ndarray:
        inverse = self.solve(np.eye(self.size))
        return (inverse + inverse.T) / 2.0

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))


def jittered_cholesky(
    matrix: np.ndarray,
    name: str = "matrix",
    start: float = JITTER_START,
    maximum: float = JITTER_MAX,
    growth: float = JITTER_GROWTH,
) -> Cholesky:
    """
    Factorize an SPD matrix, escalating diagonal jitter on failure.

    Jitter starts at ``start * trace / size`` and grows by ``growth`` up to
    ``maximum * trace / size``.

    Raises
    ------
    FactorizationError
        If the matrix is not finite or still fails at maximum jitter.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        logger.error(f"Cannot factorize {name}: non-finite entries")
        raise FactorizationError(f"{name} has non-finite entries")
    try:
        return Cholesky(cho_factor(matrix, lower=True, check_finite=False))
    except LinAlgError:
        pass

    size = matrix.shape[0]
    base = abs(np.trace(matrix)) / max(size, 1) or 1.0
    relative = start
    while relative <= maximum * (1.0 + 1e-9):
        jitter = relative * base
        try:
            factor = cho_factor(matrix + jitter * np.eye(size), lower=True, check_finite=False)
        except LinAlgError:
            relative *= growth
            continue
        warn(f"Factorized {name} ({size}x{size}) with jitter {jitter:.3g}", JitterWarning)
        return Cholesky(factor, jitter)

    logger.error(f"Failed to factorize {name} ({size}x{size}) at maximum jitter {maximum * base:.3g}")
    raise FactorizationError(f"{name} is not positive definite even with jitter {maximum * base:.3g}")


def spd_sqrt(matrix: np.ndarray):
    """Symmetric square root and inverse square root of an SPD matrix."""
    values, vectors = eigh(matrix)
    if np.any(values <= 0):
        raise FactorizationError("matrix is not positive definite")
    root = np.sqrt(values)
    return (vectors * root) @ vectors.T, (vectors / root) @ vectors.T


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0
