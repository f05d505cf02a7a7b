# models.py

from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    TypeAdapter,
    model_validator,
)

from famgp.config import PERIODIC_COEFFICIENTS, SE_ALPHA, SE_NORMALIZATION


def _as_float_array(value: Any) -> np.ndarray:
    array = np.array(value, dtype=float)
    array.setflags(write=False)
    return array


FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(lambda array: array.tolist(), return_type=list),
]


class KernelKind(str, Enum):
    """Kernel families with a closed-form Mercer expansion."""

    SQUARED_EXPONENTIAL = "squared-exponential"
    PERIODIC = "periodic"
    CHEBYSHEV = "chebyshev"


class SquaredExponentialParams(BaseModel):
    """
    Hyperparameters of the squared-exponential kernel.

    Attributes
    ----------
    l_se : float
        Length scale, in normalized input units.
    alpha_se : float
        Global scaling factor of the eigenfunctions. Must shrink as the input range grows.
    normalization : str
        Eigenfunction normalization, "reference" (shipped) or "alternate".
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["squared-exponential"] = "squared-exponential"
    l_se: float = Field(gt=0)
    alpha_se: float = Field(default=SE_ALPHA, gt=0)
    normalization: Literal["reference", "alternate"] = SE_NORMALIZATION


class PeriodicParams(BaseModel):
    """
    Hyperparameters of the periodic kernel.

    Attributes
    ----------
    f_pr : float
        Angular frequency in radians per normalized input unit.
    w_pr : float
        Kernel width.
    coefficients : str
        Fourier coefficient family, "gaussian" (closed form with offset and scale) or "bessel" (exact).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["periodic"] = "periodic"
    f_pr: float = Field(gt=0)
    w_pr: float = Field(gt=0)
    coefficients: Literal["gaussian", "bessel"] = PERIODIC_COEFFICIENTS


class ChebyshevParams(BaseModel):
    """
    Hyperparameters of the Chebyshev kernel, valid on [-1, 1].

    Attributes
    ----------
    a : float
        Weight of the non-constant terms, in (0, 1].
    b : float
        Geometric decay of the eigenvalues, in (0, 1).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["chebyshev"] = "chebyshev"
    a: float = Field(gt=0, le=1)
    b: float = Field(gt=0, lt=1)


KernelParams = Annotated[
    Union[SquaredExponentialParams, PeriodicParams, ChebyshevParams],
    Field(discriminator="kind"),
]

_KERNEL_PARAMS_ADAPTER = TypeAdapter(KernelParams)


def parse_params(kind: Union[KernelKind, str], values: Optional[Dict[str, Any]] = None):
    """
    Build validated kernel parameters for a kernel kind.

    Raises
    ------
    pydantic.ValidationError
        If the kind is unknown or a constraint is violated.
    """
    payload = dict(values or {})
    payload["kind"] = KernelKind(kind).value if isinstance(kind, KernelKind) else kind
    return _KERNEL_PARAMS_ADAPTER.validate_python(payload)


def replace_params(params, **changes):
    """Return a validated copy of ``params`` with ``changes`` applied."""
    return parse_params(params.kind, {**params.model_dump(exclude={"kind"}), **changes})


class InputTransform(BaseModel):
    """
    Affine map from raw inputs to the normalized interval [-1, 1].

    Attributes
    ----------
    shift : float
        Midpoint of the training range.
    scale : float
        Half-width of the training range.
    """

    model_config = ConfigDict(frozen=True)

    shift: float = 0.0
    scale: float = Field(default=1.0, gt=0)

    @classmethod
    def from_data(cls, X: np.ndarray) -> "InputTransform":
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            return cls()
        low, high = float(X.min()), float(X.max())
        half_width = (high - low) / 2.0
        return cls(shift=(high + low) / 2.0, scale=half_width if half_width > 0 else 1.0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        u = (np.asarray(X, dtype=float) - self.shift) / self.scale
        # Round-off at the ends of the training range must not leave [-1, 1].
        return np.where(np.abs(np.abs(u) - 1.0) < 1e-12, np.sign(u), u)

    def derivative_factor(self, k: int) -> float:
        """Chain-rule factor turning a normalized k-th derivative into a raw-input one."""
        return self.scale ** (-k)


class Dataset(BaseModel):
    """
    Single-output training data.

    Attributes
    ----------
    X : np.ndarray
        Inputs, shape (N,).
    Y : np.ndarray
        Targets, shape (N,).
    noise_variance : float or np.ndarray
        Homoscedastic variance, or one variance per observation.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: FloatArray
    Y: FloatArray
    noise_variance: Union[float, FloatArray] = 1.0

    @model_validator(mode="after")
    def _check_shapes(self) -> "Dataset":
        if self.X.ndim != 1 or self.Y.ndim != 1:
            raise ValueError("X and Y must be one-dimensional")
        if self.X.shape != self.Y.shape:
            raise ValueError(f"X has {self.X.size} entries but Y has {self.Y.size}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("X and Y must be finite")
        noise = np.asarray(self.noise_variance, dtype=float)
        if noise.ndim not in (0, 1) or (noise.ndim == 1 and noise.shape != self.X.shape):
            raise ValueError("noise_variance must be a scalar or have one entry per sample")
        if not np.all(np.isfinite(noise)) or np.any(noise <= 0):
            raise ValueError("noise_variance must be positive and finite")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.X.size)

    @property
    def homoscedastic(self) -> bool:
        return np.ndim(self.noise_variance) == 0


NoiseKind = Literal["separable", "per-sample", "per-entry", "full"]


class MODataset(BaseModel):
    """
    Multi-output training data.

    Attributes
    ----------
    X : np.ndarray
        Inputs, shape (N,).
    Y : np.ndarray
        Targets, shape (N, M). Missing observations are NaN.
    noise_kind : str
        "separable" (M x M shared by all samples), "per-sample" (N x M x M),
        "per-entry" (N x M variances) or "full" (NM x NM, output-major).
    noise : np.ndarray
        Noise covariance in the layout given by ``noise_kind``.

    Notes
    -----
    Vectorization is output-major: entry ``j * N + i`` is output ``j`` of sample ``i``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: FloatArray
    Y: FloatArray
    noise_kind: NoiseKind = "separable"
    noise: FloatArray

    @model_validator(mode="after")
    def _check_shapes(self) -> "MODataset":
        if self.X.ndim != 1:
            raise ValueError("X must be one-dimensional")
        if self.Y.ndim != 2 or self.Y.shape[0] != self.X.size:
            raise ValueError(f"Y must have shape ({self.X.size}, M), got {self.Y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X must be finite")
        if np.any(np.isinf(self.Y)):
            raise ValueError("Y must be finite or NaN for missing entries")
        N, M = self.Y.shape
        expected = {
            "separable": (M, M),
            "per-sample": (N, M, M),
            "per-entry": (N, M),
            "full": (N * M, N * M),
        }[self.noise_kind]
        if self.noise.shape != expected:
            raise ValueError(
                f"noise of kind '{self.noise_kind}' must have shape {expected}, got {self.noise.shape}"
            )
        if not np.all(np.isfinite(self.noise)):
            raise ValueError("noise must be finite")
        if self.noise_kind == "per-entry":
            if np.any(self.noise <= 0):
                raise ValueError("noise variances must be positive")
        elif self.noise_kind in ("separable", "full"):
            _require_spd(self.noise, "noise")
        else:
            for index, block in enumerate(self.noise):
                _require_spd(block, f"noise[{index}]")
        return self

    @property
    def n_samples(self) -> int:
        return int(self.X.size)

    @property
    def n_outputs(self) -> int:
        return int(self.Y.shape[1])

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.Y)

    @property
    def complete(self) -> bool:
        return bool(np.all(self.observed))

    def vectorized(self) -> np.ndarray:
        """Targets stacked output-major, shape (N * M,)."""
        return self.Y.T.reshape(-1)

    def output(self, j: int, noise_variance: Optional[float] = None) -> Dataset:
        """Single-output view of output ``j`` restricted to its observed samples."""
        mask = self.observed[:, j]
        if noise_variance is None:
            if self.noise_kind == "separable":
                noise_variance = float(self.noise[j, j])
            elif self.noise_kind == "per-entry":
                noise_variance = self.noise[mask, j]
            elif self.noise_kind == "per-sample":
                noise_variance = self.noise[mask, j, j]
            else:
                diagonal = np.diag(self.noise).reshape(self.n_outputs, self.n_samples)
                noise_variance = diagonal[j, mask]
        return Dataset(X=self.X[mask], Y=self.Y[mask, j], noise_variance=noise_variance)


def _require_spd(matrix: np.ndarray, name: str) -> None:
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"{name} must be positive definite") from e


class CoregionalizationMatrix(BaseModel):
    """
    Output similarity matrix K_f stored through its Cholesky factor.

    Attributes
    ----------
    L : np.ndarray
        Lower-triangular M x M factor with strictly positive diagonal.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    L: FloatArray

    @model_validator(mode="after")
    def _check_factor(self) -> "CoregionalizationMatrix":
        if self.L.ndim != 2 or self.L.shape[0] != self.L.shape[1]:
            raise ValueError("L must be square")
        if np.any(np.triu(self.L, 1) != 0):
            raise ValueError("L must be lower triangular")
        if np.any(np.diag(self.L) <= 0):
            raise ValueError("L must have a strictly positive diagonal")
        return self

    @classmethod
    def from_kf(cls, K_f: np.ndarray) -> "CoregionalizationMatrix":
        K_f = np.atleast_2d(np.asarray(K_f, dtype=float))
        _require_spd(K_f, "K_f")
        return cls(L=np.linalg.cholesky(K_f))

    @classmethod
    def identity(cls, M: int) -> "CoregionalizationMatrix":
        return cls(L=np.eye(M))

    @property
    def M(self) -> int:
        return int(self.L.shape[0])

    @property
    def K_f(self) -> np.ndarray:
        return self.L @ self.L.T

    def correlation(self) -> np.ndarray:
        """K_f normalized to unit diagonal."""
        K_f = self.K_f
        scale = np.sqrt(np.diag(K_f))
        return K_f / np.outer(scale, scale)


class MercerBasis(BaseModel):
    """
    Truncated Mercer expansion of a kernel.

    Attributes
    ----------
    params : KernelParams
        Kernel hyperparameters; ``params.kind`` selects the family.
    n : int
        Number of retained eigenpairs after the eigenvalue floor.
    requested_n : int
        Number of eigenpairs asked for.
    lam : np.ndarray
        Retained eigenvalues, shape (n,).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    params: KernelParams
    n: int = Field(ge=1)
    requested_n: int = Field(ge=1)
    lam: FloatArray

    @model_validator(mode="after")
    def _check_eigenvalues(self) -> "MercerBasis":
        if self.lam.shape != (self.n,):
            raise ValueError(f"expected {self.n} eigenvalues, got shape {self.lam.shape}")
        if not np.all(np.isfinite(self.lam)) or np.any(self.lam <= 0):
            raise ValueError("eigenvalues must be strictly positive and finite")
        return self

    @property
    def kind(self) -> KernelKind:
        return KernelKind(self.params.kind)


class BasisMatrix(BaseModel):
    """Eigenfunctions (or their input derivatives) evaluated at N inputs, shape (N, n)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: FloatArray
    derivative_order: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_finite(self) -> "BasisMatrix":
        if self.values.ndim != 2:
            raise ValueError("values must be a matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("basis matrix entries must be finite")
        return self


class Posterior(BaseModel):
    """
    Predictive distribution at m points.

    Attributes
    ----------
    mean : np.ndarray
        Predictive mean. Multi-output predictions are stacked output-major.
    covariance : np.ndarray, optional
        Full predictive covariance.
    variance : np.ndarray, optional
        Diagonal of the predictive covariance, for variance-only predictions.
    derivative_order : int
        Input derivative order the posterior describes.
    outputs : tuple of int, optional
        Zero-based output indices for multi-output predictions.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: FloatArray
    covariance: Optional[FloatArray] = None
    variance: Optional[FloatArray] = None
    derivative_order: int = Field(default=0, ge=0)
    outputs: Optional[Tuple[int, ...]] = None

    @property
    def std(self) -> np.ndarray:
        variance = self.variance if self.variance is not None else np.diag(self.covariance)
        return np.sqrt(np.clip(variance, 0.0, None))

    def mean_matrix(self) -> np.ndarray:
        """Mean as an (m, number of outputs) matrix."""
        count = len(self.outputs) if self.outputs else 1
        return self.mean.reshape(count, -1).T

    def variance_matrix(self) -> Optional[np.ndarray]:
        variance = self.variance
        if variance is None and self.covariance is not None:
            variance = np.diag(self.covariance)
        if variance is None:
            return None
        count = len(self.outputs) if self.outputs else 1
        return variance.reshape(count, -1).T


class FittedModel(BaseModel):
    """
    Compressed single-output posterior.

    Attributes
    ----------
    basis : MercerBasis
    transform : InputTransform
    alpha_prime : np.ndarray
        Posterior mean of the basis weights, shape (n,).
    G : np.ndarray
        Posterior covariance of the basis weights, (Λ⁻¹ + ΦᵀΣ⁻¹Φ)⁻¹, shape (n, n).
    noise_variance : float or np.ndarray
    output_scale : float
        Signal variance multiplying every eigenvalue (the 1 x 1 K_f).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: MercerBasis
    transform: InputTransform
    alpha_prime: FloatArray
    G: FloatArray
    noise_variance: Union[float, FloatArray]
    output_scale: float = Field(default=1.0, gt=0)

    @property
    def lambda_bar_inv(self) -> np.ndarray:
        return self.G


class MOFittedModel(BaseModel):
    """
    Compressed multi-output posterior over the nM basis weights (output-major).

    Attributes
    ----------
    basis : MercerBasis
    transform : InputTransform
    coregionalization : CoregionalizationMatrix
    alpha_prime : np.ndarray
        Shape (n * M,).
    G : np.ndarray
        Shape (n * M, n * M).
    noise_kind, noise :
        Noise description the model was fitted with.
    noise_scale : float
        Multiplier applied to ``noise``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: MercerBasis
    transform: InputTransform
    coregionalization: CoregionalizationMatrix
    alpha_prime: FloatArray
    G: FloatArray
    noise_kind: NoiseKind
    noise: FloatArray
    noise_scale: float = Field(default=1.0, gt=0)

    @property
    def n_outputs(self) -> int:
        return self.coregionalization.M

    @property
    def K_f(self) -> np.ndarray:
        return self.coregionalization.K_f


class OptimizerConfig(BaseModel):
    """
    Settings of the backtracking gradient ascent.

    Attributes
    ----------
    max_iters : int
    initial_step : float
    grad_tol : float
        Converged when the gradient norm is at most ``grad_tol * max(1, |LML|)``.
    step_shrink : float
        Factor applied after a rejected step, in (0, 1).
    step_grow : float
        Factor applied after an accepted step, at least 1.
    min_step : float
        A step below this ends the run as stalled.
    seed : int
    restarts : int
        Extra randomly perturbed starts; the best final objective wins.
    restart_scale : float
        Standard deviation of the perturbation in unconstrained space.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: int = Field(default=100, gt=0)
    initial_step: float = Field(default=1e-2, gt=0)
    grad_tol: float = Field(default=1e-6, gt=0)
    step_shrink: float = Field(default=0.5, gt=0, lt=1)
    step_grow: float = Field(default=1.5, ge=1)
    min_step: float = Field(default=1e-14, gt=0)
    seed: int = Field(default=0, ge=0)
    restarts: int = Field(default=0, ge=0)
    restart_scale: float = Field(default=0.5, gt=0)


class TrainingRecord(BaseModel):
    iter: int
    lml: float
    grad_norm: float
    step: float
    wall_time: float


class TrainingTrace(BaseModel):
    """Accepted iterates of one optimization run."""

    records: List[TrainingRecord] = []
    converged: bool = False
    reason: str = ""

    @property
    def iterations(self) -> int:
        return max(len(self.records) - 1, 0)

    @property
    def final_lml(self) -> float:
        return self.records[-1].lml if self.records else float("nan")


class DatasetSpec(BaseModel):
    """
    How an experiment obtains its data.

    Attributes
    ----------
    generator : str
        "sinusoids", "correlated" or "csv".
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    generator: Literal["sinusoids", "correlated", "csv"] = "sinusoids"
    seed: int = 0
    n_samples: int = Field(default=1000, ge=1)
    x_range: Tuple[float, float] = (-1.0, 1.0)
    num_terms: int = Field(default=10, ge=1)
    coeff_range: Tuple[float, float] = (1.0, 10.0)
    noise_sd: float = Field(default=0.1, ge=0)
    l_se: float = Field(default=0.1, gt=0)
    K_f: List[List[float]] = [[1.0, -0.95], [-0.95, 1.0]]
    noise_var: float = Field(default=0.05, gt=0)
    csv_path: Optional[str] = None


class ExperimentConfig(BaseModel):
    """
    Fully serializable description of a run; reproducible from itself and its seed.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment: str = "fit"
    kernel: KernelKind = KernelKind.SQUARED_EXPONENTIAL
    params: Optional[Dict[str, Any]] = None
    n: int = Field(default=20, ge=1)
    dataset: DatasetSpec = DatasetSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    out_dir: str = "results"
    seed: int = 0
    sizes: List[int] = [250, 500, 1000, 2000, 10_000, 100_000]
    eig_counts: List[int] = [20, 30, 40, 50, 60, 70, 80, 90, 100]
    seeds: List[int] = [0, 1, 2]
    methods: List[str] = []
    iterations: int = Field(default=100, ge=1)
    repeats: int = Field(default=3, ge=1)
    exact_max_n: int = Field(default=2000, ge=1)
    train_fraction: float = Field(default=2.0 / 3.0, gt=0, lt=1)


class BenchCase(BaseModel):
    """One row of a benchmark report."""

    method: str
    N: int
    M: int = 1
    n: int = 0
    iters: int = 0
    seconds: Optional[float] = None
    rmse: Optional[float] = None
    params: Dict[str, Any] = {}
    seed: int = 0
    config_hash: str = ""
    status: str = "ok"
    extra: Dict[str, Any] = {}


class BenchReport(BaseModel):
    """Benchmark rows plus the environment they were produced in."""

    experiment: str
    cases: List[BenchCase] = []
    environment: Dict[str, Any] = {}
    summary: Dict[str, Any] = {}
    config: Dict[str, Any] = {}


class PredictRequest(BaseModel):
    """
    Body of a prediction request to the HTTP app.

    Attributes
    ----------
    x : list of float
        Raw prediction inputs.
    derivative : int, optional
        Input derivative order (default is 0).
    variance : bool, optional
        Whether to return the predictive variance (default is False).
    outputs : list of int, optional
        Zero-based outputs of a multi-output model (default is all of them).
    """

    model_config = ConfigDict(extra="forbid")

    x: List[float] = Field(min_length=1)
    derivative: int = Field(default=0, ge=0)
    variance: bool = False
    outputs: Optional[List[int]] = None


class PredictResponse(BaseModel):
    """
    Predictions, one inner list per requested output.
    """

    x: List[float]
    outputs: List[int]
    derivative: int
    mean: List[List[float]]
    variance: Optional[List[List[float]]] = None


class ModelRequest(BaseModel):
    path: str
