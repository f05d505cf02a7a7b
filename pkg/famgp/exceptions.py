import warnings

import numpy as np

from famgp.utils import logger


class FamgpError(Exception):
    """Base class for errors raised by famgp."""


class DomainError(FamgpError, ValueError):
    """Inputs fall outside the region where an expansion is valid."""


class ParameterError(FamgpError, ValueError):
    """A parameter name is unknown or not supported by the requested operation."""


class DimensionMismatchError(FamgpError, ValueError):
    """Array shapes are inconsistent with each other."""


class EmptyDatasetError(FamgpError, ValueError):
    """An operation needs at least one observation."""


class SizeGuardError(FamgpError, ValueError):
    """A dense computation was requested above its configured size guard."""


class DataFormatError(FamgpError, ValueError):
    """A CSV or JSON file does not follow the expected layout."""


class EigenvalueUnderflowError(FamgpError, ArithmeticError):
    """Every eigenvalue beyond the leading one fell below the floor."""


class BasisOverflowError(FamgpError, OverflowError):
    """Eigenfunction values exceeded the representable range."""


class NonFiniteError(FamgpError, ArithmeticError):
    """An objective or gradient evaluated to a non-finite value."""


class FactorizationError(FamgpError, np.linalg.LinAlgError):
    """A symmetric positive definite factorization failed after maximum jitter."""


class NumericalWarning(UserWarning):
    """Base category for recoverable numerical events."""


class EigenvalueFloorWarning(NumericalWarning):
    """Eigenvalues were truncated or clamped at the relative floor."""


class JitterWarning(NumericalWarning):
    """Diagonal jitter was needed to factorize a matrix."""


class ExtrapolationWarning(NumericalWarning):
    """Prediction inputs lie outside the normalized training range."""


class FallbackWarning(NumericalWarning):
    """A fast path failed and a direct computation was used instead."""


def warn(message: str, category: type = NumericalWarning) -> None:
    """Log a recoverable numerical event and emit it as a warning."""
    logger.warning(message)
    warnings.warn(message, category, stacklevel=3)
