"""
Synthetic data generators and the CSV/JSON files the command line reads and writes.

CSV files are comma-separated with a mandatory header, UTF-8 and LF line
endings. An empty field is a missing value.
"""

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from famgp.config import EXACT_MAX_NM
from famgp.exceptions import DataFormatError, SizeGuardError
from famgp.kernels import kernel_matrix
from famgp.linalg import jittered_cholesky
from famgp.models import (
    BenchCase,
    BenchReport,
    CoregionalizationMatrix,
    Dataset,
    FloatArray,
    MODataset,
    Posterior,
    SquaredExponentialParams,
    TrainingRecord,
    TrainingTrace,
)
from famgp.utils import logger

TRACE_COLUMNS = ("iter", "lml", "grad_norm", "step", "wall_time_s")


def default_noise(Y: np.ndarray) -> float:
    """var(Y) / 10, ignoring missing entries; 1.0 for constant data."""
    variance = float(np.nanvar(Y)) / 10.0
    return variance if variance > 0 else 1.0


class SinusoidData(BaseModel):
    """
    Noisy sum of sinusoids Σ c_i sin(f_i x + φ_i).

    Attributes
    ----------
    dataset : Dataset
    Y_true : np.ndarray
        Noise-free targets at ``dataset.X``.
    amplitudes, frequencies, phases : np.ndarray
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dataset: Dataset
    Y_true: FloatArray
    amplitudes: FloatArray
    frequencies: FloatArray
    phases: FloatArray

    def truth(self, X: np.ndarray, k: int = 0) -> np.ndarray:
        """k-th derivative of the noise-free function at ``X``."""
        X = np.asarray(X, dtype=float).reshape(-1)
        shifted = np.outer(X, self.frequencies) + self.phases + k * np.pi / 2.0
        return np.sin(shifted) @ (self.amplitudes * self.frequencies**k)


def gen_sinusoids(
    seed: int,
    N: int,
    x_range: Tuple[float, float] = (-1.0, 1.0),
    num_terms: int = 10,
    coeff_range: Tuple[float, float] = (1.0, 10.0),
    noise_sd: float = 0.1,
) -> SinusoidData:
    """
    Evenly spaced inputs with amplitudes, frequencies and phases drawn from U(coeff_range).

    The dataset's noise variance is noise_sd² (var(Y)/10 when noise_sd is 0).
    """
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    rng = np.random.default_rng(seed)
    low, high = coeff_range
    amplitudes = rng.uniform(low, high, num_terms)
    frequencies = rng.uniform(low, high, num_terms)
    phases = rng.uniform(low, high, num_terms)
    X = np.linspace(x_range[0], x_range[1], N)
    Y_true = np.sin(np.outer(X, frequencies) + phases) @ amplitudes
    Y = Y_true + rng.normal(0.0, noise_sd, N) if noise_sd > 0 else Y_true.copy()
    noise_variance = noise_sd**2 if noise_sd > 0 else default_noise(Y)
    return SinusoidData(
        dataset=Dataset(X=X, Y=Y, noise_variance=noise_variance),
        Y_true=Y_true,
        amplitudes=amplitudes,
        frequencies=frequencies,
        phases=phases,
    )


class CorrelatedData(BaseModel):
    """Multi-output draw with its noise-free latent values, shape (N, M)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dataset: MODataset
    F_true: FloatArray


def gen_correlated(
    seed: int,
    N: int,
    l_se: float = 0.1,
    K_f=((1.0, -0.95), (-0.95, 1.0)),
    noise_var: float = 0.05,
    max_nm: int = EXACT_MAX_NM,
) -> CorrelatedData:
    """
    Draw Y ~ N(0, K_f ⊗ K_XX + noise_var I) on N evenly spaced inputs inside (-1, 1).

    Raises
    ------
    SizeGuardError
        If N * M exceeds ``max_nm``.
    """
    K_f = np.asarray(K_f, dtype=float)
    coreg = CoregionalizationMatrix.from_kf(K_f)
    M = coreg.M
    if N * M > max_nm:
        raise SizeGuardError(f"Sampling {N * M} correlated values exceeds the guard {max_nm}")
    rng = np.random.default_rng(seed)
    X = np.linspace(-1.0, 1.0, N + 2)[1:-1]
    K_XX = kernel_matrix(SquaredExponentialParams(l_se=l_se), X)
    chol = jittered_cholesky(np.kron(K_f, K_XX), "K_f ⊗ K_XX")
    latent = np.tril(chol.factor[0]) @ rng.standard_normal(N * M)
    F_true = latent.reshape(M, N).T
    Y = F_true + rng.normal(0.0, np.sqrt(noise_var), (N, M))
    dataset = MODataset(X=X, Y=Y, noise_kind="separable", noise=noise_var * np.eye(M))
    return CorrelatedData(dataset=dataset, F_true=F_true)


def _format(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def _write_rows(path: Union[str, Path], header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_format(value) for value in row])
    return path


def read_columns(path: Union[str, Path], required: Sequence[str] = ()) -> Dict[str, np.ndarray]:
    """
    Read a headed CSV into float columns; empty fields become NaN.

    Raises
    ------
    DataFormatError
        On a missing header, a missing required column, a short row or a non-numeric field.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}: missing header row")
        header = [name.strip() for name in header]
        for name in required:
            if name not in header:
                logger.error(f"{path}: missing column '{name}'")
                raise DataFormatError(f"{path}: missing column '{name}'")
        values: List[List[float]] = [[] for _ in header]
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            for index, field in enumerate(row):
                field = field.strip()
                try:
                    values[index].append(float(field) if field else np.nan)
                except ValueError as e:
                    raise DataFormatError(f"{path}:{line}: column '{header[index]}' has non-numeric value {field!r}") from e
    return {name: np.array(column, dtype=float) for name, column in zip(header, values)}


def write_dataset_csv(path: Union[str, Path], X: np.ndarray, Y: np.ndarray) -> Path:
    """Write ``x,y1,...,yM``; NaN targets are written as empty fields."""
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    header = ["x"] + [f"y{j + 1}" for j in range(Y.shape[1])]
    return _write_rows(path, header, [np.asarray(X, dtype=float)] + list(Y.T))


def read_dataset_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read ``x,y1,...,yM`` into X (N,) and Y (N, M).

    Raises
    ------
    DataFormatError
        If ``x`` or ``y1`` is missing, or an input value is missing.
    """
    columns = read_columns(path, required=("x", "y1"))
    M = 1
    while f"y{M + 1}" in columns:
        M += 1
    X = columns["x"]
    if np.any(np.isnan(X)):
        raise DataFormatError(f"{path}: column 'x' has missing values")
    return X, np.column_stack([columns[f"y{j + 1}"] for j in range(M)])


def load_training_data(
    path: Union[str, Path], noise_variance: Optional[float] = None
) -> Union[Dataset, MODataset]:
    """
    Dataset from a CSV: single-output for one ``y`` column, otherwise multi-output with
    separable diagonal noise. The default noise variance is var(y)/10 per output.
    """
    X, Y = read_dataset_csv(path)
    if Y.shape[1] == 1:
        observed = ~np.isnan(Y[:, 0])
        y = Y[observed, 0]
        variance = noise_variance if noise_variance is not None else default_noise(y)
        return Dataset(X=X[observed], Y=y, noise_variance=variance)
    if noise_variance is not None:
        variances = np.full(Y.shape[1], noise_variance)
    else:
        variances = np.array([default_noise(column) for column in Y.T])
    return MODataset(X=X, Y=Y, noise_kind="separable", noise=np.diag(variances))


def write_predictions_csv(path: Union[str, Path], X_star: np.ndarray, posterior: Posterior) -> Path:
    """Write ``x,mean_j[,var_j]...`` with 1-based output numbers."""
    outputs = posterior.outputs or (0,)
    means = posterior.mean_matrix()
    variances = posterior.variance_matrix()
    header, columns = ["x"], [np.asarray(X_star, dtype=float).reshape(-1)]
    for index, j in enumerate(outputs):
        header.append(f"mean_{j + 1}")
        columns.append(means[:, index])
        if variances is not None:
            header.append(f"var_{j + 1}")
            columns.append(variances[:, index])
    return _write_rows(path, header, columns)


def read_predictions_csv(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return read_columns(path, required=("x",))


def write_trace_csv(path: Union[str, Path], trace: TrainingTrace) -> Path:
    """Write iter,lml,grad_norm,step,wall_time_s, one row per accepted iterate."""
    records = trace.records
    columns = [[getattr(record, field) for record in records] for field in ("iter", "lml", "grad_norm", "step", "wall_time")]
    return _write_rows(path, TRACE_COLUMNS, [np.array(column, dtype=float) for column in columns])


def read_trace_csv(path: Union[str, Path]) -> List[TrainingRecord]:
    columns = read_columns(path, required=TRACE_COLUMNS)
    return [
        TrainingRecord(iter=int(it), lml=lml, grad_norm=grad_norm, step=step, wall_time=wall_time)
        for it, lml, grad_norm, step, wall_time in zip(*(columns[name] for name in TRACE_COLUMNS))
    ]


def write_report(path: Union[str, Path], report: BenchReport) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_report(path: Union[str, Path]) -> BenchReport:
    return BenchReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


CASE_COLUMNS = ("method", "N", "M", "n", "iters", "seconds", "rmse", "seed", "config_hash", "status")


def write_cases_csv(path: Union[str, Path], cases: Sequence[BenchCase]) -> Path:
    """Plot-ready table of benchmark rows; missing timings or errors are empty fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CASE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for case in cases:
            row = case.model_dump(include=set(CASE_COLUMNS))
            writer.writerow({key: "" if value is None else value for key, value in row.items()})
    return path


def read_cases_csv(path: Union[str, Path]) -> List[BenchCase]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [name for name in CASE_COLUMNS if name not in (reader.fieldnames or [])]
        if missing:
            raise DataFormatError(f"{path}: missing column '{missing[0]}'")
        return [
            BenchCase.model_validate(
                {key: (None if value == "" and key in ("seconds", "rmse") else value) for key, value in row.items()}
            )
            for row in reader
        ]
