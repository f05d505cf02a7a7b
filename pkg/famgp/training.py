"""
Hyperparameter training by maximizing the log marginal likelihood.

The general path recomputes the eigenfunctions at every evaluation; the fast
path builds them once and only re-evaluates eigenvalues, which is possible
when every trained parameter lives in the eigenvalues.
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from famgp.config import CHUNK_ROWS
from famgp.core import (
    NOISE,
    OUTPUT_SCALE,
    compute_statistics,
    fast_lml_and_grads,
    fit,
    fit_from_statistics,
    lml_and_grads,
)
from famgp.exact import exact_fit, exact_lml_and_grads, exact_mo_fit, exact_mo_lml_and_grads
from famgp.exceptions import EmptyDatasetError, ParameterError
from famgp.kernels import kernel_of, make_basis, resolve_params
from famgp.models import (
    CoregionalizationMatrix,
    Dataset,
    InputTransform,
    KernelKind,
    MercerBasis,
    MODataset,
    OptimizerConfig,
    TrainingTrace,
    parse_params,
    replace_params,
)
from famgp.multioutput import as_coregionalization, mo_fit, mo_lml_and_grads
from famgp.optimizer import LOGIT_EPSILON, Memo, ParamSpec, ParamVector, bounded, free, optimize, positive
from famgp.utils import logger

# Initial hyperparameters in normalized input units.
DEFAULT_INIT = {
    KernelKind.SQUARED_EXPONENTIAL: {"l_se": 0.5},
    KernelKind.PERIODIC: {"f_pr": 1.0, "w_pr": 0.5},
    KernelKind.CHEBYSHEV: {"a": 0.5, "b": 0.5},
}


class TrainingResult(BaseModel):
    """
    Outcome of one training run.

    Attributes
    ----------
    model : FittedModel, MOFittedModel, ExactGPModel or ExactMOModel
        Model conditioned on the data at the learned parameters.
    params : dict
        Learned values, including ``noise_variance``, ``output_scale`` and the
        ``L[j,l]`` entries where they were trained.
    trace : TrainingTrace
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: Any
    params: Dict[str, float]
    trace: TrainingTrace

    @property
    def K_f(self) -> Optional[np.ndarray]:
        L = factor_from_values(self.params)
        return None if L is None else L @ L.T


def default_params(kind: Union[KernelKind, str], overrides: Optional[Dict[str, Any]] = None):
    kind = KernelKind(kind)
    return parse_params(kind, {**DEFAULT_INIT[kind], **(overrides or {})})


def spec_for(name: str) -> ParamSpec:
    if name == "a":
        return bounded(name, LOGIT_EPSILON, 1.0)
    if name == "b":
        return bounded(name, 0.0, 1.0)
    if name.startswith("L["):
        row, col = factor_index(name)
        return positive(name) if row == col else free(name)
    return positive(name)


def factor_names(M: int) -> List[str]:
    return [f"L[{j},{l}]" for j in range(M) for l in range(j + 1)]


def factor_index(name: str) -> Tuple[int, int]:
    row, col = name[2:-1].split(",")
    return int(row), int(col)


def factor_from_values(values: Dict[str, float]) -> Optional[np.ndarray]:
    entries = {factor_index(name): value for name, value in values.items() if name.startswith("L[")}
    if not entries:
        return None
    M = max(row for row, _ in entries) + 1
    L = np.zeros((M, M))
    for (row, col), value in entries.items():
        L[row, col] = value
    return L


def _kernel_names(params, names: Optional[Sequence[str]]) -> List[str]:
    kernel = kernel_of(params)
    names = list(kernel.hyperparameters) if names is None else list(names)
    for name in names:
        kernel.check_param(name)
    return names


def _run(
    names: List[str],
    init: Dict[str, float],
    evaluate: Callable[[Dict[str, float]], Tuple[float, Dict[str, float]]],
    config: Optional[OptimizerConfig],
) -> Tuple[Dict[str, float], TrainingTrace]:
    specs = [spec_for(name) for name in names]

    def joint(params: ParamVector):
        lml, grads = evaluate(params.as_dict())
        return lml, np.array([grads[name] for name in names])

    memo = Memo(joint)
    best, trace = optimize(memo.objective, memo.gradient, ParamVector.from_dict(specs, init), config)
    logger.debug(f"Training used {memo.calls} joint evaluations")
    return best.as_dict(), trace


def _split(params, values: Dict[str, float]):
    kernel_values = {name: value for name, value in values.items() if name in kernel_of(params).hyperparameters}
    return replace_params(params, **kernel_values) if kernel_values else params


def _single_output_setup(dataset: Dataset, kind, params, names, learn_noise, learn_scale, output_scale):
    if dataset.n_samples == 0:
        raise EmptyDatasetError("The dataset has no observations.")
    params = resolve_params(kind, params)
    kernel_names = _kernel_names(params, names)
    names = list(kernel_names)
    init = {name: float(getattr(params, name)) for name in kernel_names}
    if learn_scale:
        names.append(OUTPUT_SCALE)
        init[OUTPUT_SCALE] = output_scale
    if learn_noise and dataset.homoscedastic:
        names.append(NOISE)
        init[NOISE] = float(dataset.noise_variance)
    return params, names, init


def _multioutput_setup(dataset: MODataset, kind, params, K_f, names, learn_noise, noise_scale):
    params = resolve_params(kind, params)
    kernel_names = _kernel_names(params, names)
    coreg = CoregionalizationMatrix.identity(dataset.n_outputs) if K_f is None else as_coregionalization(K_f)
    L_names = factor_names(coreg.M)
    init = {name: float(getattr(params, name)) for name in kernel_names}
    init.update({name: float(coreg.L[factor_index(name)]) for name in L_names})
    grad_names = list(kernel_names) + ([NOISE] if learn_noise else [])
    if learn_noise:
        init[NOISE] = noise_scale
    return params, grad_names, L_names, init


def train(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    config: Optional[OptimizerConfig] = None,
    names: Optional[Sequence[str]] = None,
    learn_noise: bool = True,
    learn_scale: bool = False,
    output_scale: float = 1.0,
    chunk_rows: int = CHUNK_ROWS,
) -> TrainingResult:
    """
    Train kernel hyperparameters (default: all of the family's), and optionally the
    homoscedastic noise variance and the output scale, recomputing Φ each evaluation.

    The dataset's noise variance is the initial value when it is learned.
    """
    params, names, init = _single_output_setup(dataset, kind, params, names, learn_noise, learn_scale, output_scale)

    def evaluate(values):
        data = dataset.model_copy(update={"noise_variance": values[NOISE]}) if NOISE in values else dataset
        return lml_and_grads(
            data, kind, _split(params, values), n, names, values.get(OUTPUT_SCALE, output_scale), chunk_rows
        )

    learned, trace = _run(names, init, evaluate, config)
    final_params = _split(params, learned)
    noise = learned.get(NOISE, dataset.noise_variance)
    model = fit(
        dataset.model_copy(update={"noise_variance": noise}),
        kind,
        final_params,
        n,
        learned.get(OUTPUT_SCALE, output_scale),
        chunk_rows,
    )
    return TrainingResult(model=model, params=learned, trace=trace)


def train_fast_path(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    config: Optional[OptimizerConfig] = None,
    names: Optional[Sequence[str]] = None,
    learn_noise: bool = True,
    learn_scale: bool = False,
    output_scale: float = 1.0,
    chunk_rows: int = CHUNK_ROWS,
) -> TrainingResult:
    """
    Train eigenvalue-only parameters with Φ built once.

    Defaults to every eigenvalue-only hyperparameter of the family. After the
    single pass over the data, each evaluation costs O(n³) regardless of N.

    Raises
    ------
    EmptyDatasetError
        If the dataset is empty.
    ParameterError
        If a trained parameter also appears in the eigenfunctions.
    """
    params = resolve_params(kind, params)
    kernel = kernel_of(params)
    if names is None:
        names = [name for name in kernel.hyperparameters if name in kernel.eigenvalue_only]
    for name in names:
        kernel.check_param(name)
        if name not in kernel.eigenvalue_only:
            raise ParameterError(
                f"Parameter '{name}' appears in the eigenfunctions of '{kernel.name}'; the fast path cannot train it."
            )
    params, names, init = _single_output_setup(dataset, kind, params, names, learn_noise, learn_scale, output_scale)
    kernel.check_n(n)
    # Eigenvalues are placeholders; only the eigenfunctions of this basis are used.
    frozen = MercerBasis(params=params, n=n, requested_n=n, lam=np.ones(n))
    transform = InputTransform.from_data(dataset.X)
    stats = compute_statistics(dataset, frozen, transform, chunk_rows)
    logger.info(f"Cached statistics of {dataset.n_samples} samples for fast-path training")

    def evaluate(values):
        basis = make_basis(kind, _split(params, values), n)
        return fast_lml_and_grads(stats, basis, names, values.get(NOISE), values.get(OUTPUT_SCALE, output_scale))

    learned, trace = _run(names, init, evaluate, config)
    basis = make_basis(kind, _split(params, learned), n)
    noise = learned.get(NOISE, dataset.noise_variance)
    model = fit_from_statistics(stats, basis, transform, noise, learned.get(OUTPUT_SCALE, output_scale))
    return TrainingResult(model=model, params=learned, trace=trace)


def train_multioutput(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    n: int,
    K_f=None,
    config: Optional[OptimizerConfig] = None,
    names: Optional[Sequence[str]] = None,
    learn_noise: bool = False,
    noise_scale: float = 1.0,
    chunk_rows: int = CHUNK_ROWS,
) -> TrainingResult:
    """
    Train the Cholesky factor of K_f jointly with kernel hyperparameters and,
    optionally, a scalar multiplier on the noise covariance.

    K_f starts at the identity unless given.
    """
    params, grad_names, L_names, init = _multioutput_setup(dataset, kind, params, K_f, names, learn_noise, noise_scale)

    def evaluate(values):
        L = CoregionalizationMatrix(L=factor_from_values(values))
        lml, grads, kf = mo_lml_and_grads(
            dataset,
            kind,
            _split(params, values),
            n,
            L,
            values.get(NOISE, noise_scale),
            grad_names,
            with_kf=True,
            chunk_rows=chunk_rows,
        )
        grads.update({name: float(kf[factor_index(name)]) for name in L_names})
        return lml, grads

    learned, trace = _run(grad_names + L_names, init, evaluate, config)
    model = mo_fit(
        dataset,
        kind,
        _split(params, learned),
        n,
        CoregionalizationMatrix(L=factor_from_values(learned)),
        learned.get(NOISE, noise_scale),
        chunk_rows=chunk_rows,
    )
    return TrainingResult(model=model, params=learned, trace=trace)


def train_exact(
    dataset: Dataset,
    kind: Union[KernelKind, str],
    params,
    config: Optional[OptimizerConfig] = None,
    names: Optional[Sequence[str]] = None,
    learn_noise: bool = True,
    learn_scale: bool = False,
    output_scale: float = 1.0,
) -> TrainingResult:
    """Train the dense GP on the closed-form kernel."""
    params, names, init = _single_output_setup(dataset, kind, params, names, learn_noise, learn_scale, output_scale)

    def model_at(values):
        data = dataset.model_copy(update={"noise_variance": values[NOISE]}) if NOISE in values else dataset
        return exact_fit(data, kind, _split(params, values), output_scale=values.get(OUTPUT_SCALE, output_scale))

    learned, trace = _run(names, init, lambda values: exact_lml_and_grads(model_at(values), names), config)
    return TrainingResult(model=model_at(learned), params=learned, trace=trace)


def train_exact_multioutput(
    dataset: MODataset,
    kind: Union[KernelKind, str],
    params,
    K_f=None,
    config: Optional[OptimizerConfig] = None,
    names: Optional[Sequence[str]] = None,
    learn_noise: bool = False,
    noise_scale: float = 1.0,
) -> TrainingResult:
    """Train K_f and kernel hyperparameters of the dense multi-output GP."""
    params, grad_names, L_names, init = _multioutput_setup(dataset, kind, params, K_f, names, learn_noise, noise_scale)

    def evaluate(values):
        L = CoregionalizationMatrix(L=factor_from_values(values))
        lml, grads, kf = exact_mo_lml_and_grads(
            dataset, kind, _split(params, values), L, values.get(NOISE, noise_scale), grad_names
        )
        grads.update({name: float(kf[factor_index(name)]) for name in L_names})
        return lml, grads

    learned, trace = _run(grad_names + L_names, init, evaluate, config)
    model = exact_mo_fit(
        dataset,
        kind,
        _split(params, learned),
        CoregionalizationMatrix(L=factor_from_values(learned)),
        learned.get(NOISE, noise_scale),
    )
    return TrainingResult(model=model, params=learned, trace=trace)
