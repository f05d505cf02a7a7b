"""
Gradient ascent with backtracking in an unconstrained parametrization.
"""

import time
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.special import expit, logit

from famgp.exceptions import FamgpError, NonFiniteError
from famgp.models import FloatArray, OptimizerConfig, TrainingRecord, TrainingTrace
from famgp.utils import logger

LOGIT_EPSILON = 1e-6

Objective = Callable[["ParamVector"], float]
Gradient = Callable[["ParamVector"], np.ndarray]


class ParamSpec(BaseModel):
    """
    One named scalar and its map to the real line.

    Attributes
    ----------
    name : str
    transform : str
        "log" for positive values, "logit" for values in (lower, upper),
        "identity" for unconstrained values.
    lower, upper : float
        Interval of the logit transform.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    transform: Literal["log", "logit", "identity"] = "log"
    lower: float = 0.0
    upper: float = 1.0


def positive(name: str) -> ParamSpec:
    return ParamSpec(name=name, transform="log")


def bounded(name: str, lower: float, upper: float) -> ParamSpec:
    return ParamSpec(name=name, transform="logit", lower=lower, upper=upper)


def free(name: str) -> ParamSpec:
    return ParamSpec(name=name, transform="identity")


class ParamVector(BaseModel):
    """
    Ordered named parameters, stored in their constrained form.

    Attributes
    ----------
    specs : tuple of ParamSpec
    values : np.ndarray
        Constrained values in the order of ``specs``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    specs: Tuple[ParamSpec, ...]
    values: FloatArray

    @classmethod
    def from_dict(cls, specs: Sequence[ParamSpec], values: Mapping[str, float]) -> "ParamVector":
        return cls(specs=tuple(specs), values=[float(values[spec.name]) for spec in specs])

    @classmethod
    def from_unconstrained(cls, specs: Sequence[ParamSpec], u: np.ndarray) -> "ParamVector":
        values = []
        for spec, value in zip(specs, u):
            if spec.transform == "log":
                values.append(np.exp(value))
            elif spec.transform == "logit":
                values.append(spec.lower + (spec.upper - spec.lower) * expit(value))
            else:
                values.append(value)
        return cls(specs=tuple(specs), values=values)

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.specs]

    def as_dict(self) -> Dict[str, float]:
        return {spec.name: float(value) for spec, value in zip(self.specs, self.values)}

    def unconstrained(self) -> np.ndarray:
        u = np.empty(len(self.specs))
        for index, (spec, value) in enumerate(zip(self.specs, self.values)):
            if spec.transform == "log":
                u[index] = np.log(value)
            elif spec.transform == "logit":
                u[index] = logit((value - spec.lower) / (spec.upper - spec.lower))
            else:
                u[index] = value
        return u

    def grad_factor(self) -> np.ndarray:
        """d(constrained) / d(unconstrained) per entry, for the chain rule."""
        factor = np.ones(len(self.specs))
        for index, (spec, value) in enumerate(zip(self.specs, self.values)):
            if spec.transform == "log":
                factor[index] = value
            elif spec.transform == "logit":
                width = spec.upper - spec.lower
                t = (value - spec.lower) / width
                factor[index] = width * t * (1.0 - t)
        return factor


class Memo:
    """
    Caches one joint evaluation so objective and gradient at the same point cost one call.

    ``evaluate`` maps a ParamVector to (value, gradient in constrained space).
    """

    def __init__(self, evaluate: Callable[[ParamVector], Tuple[float, np.ndarray]]):
        self.evaluate = evaluate
        self.key = None
        self.result = None
        self.calls = 0

    def __call__(self, params: ParamVector) -> Tuple[float, np.ndarray]:
        key = tuple(params.values.tolist())
        if key != self.key:
            self.result = self.evaluate(params)
            self.key = key
            self.calls += 1
        return self.result

    def objective(self, params: ParamVector) -> float:
        return self(params)[0]

    def gradient(self, params: ParamVector) -> np.ndarray:
        return self(params)[1]


def _safe_objective(objective: Objective, params: ParamVector) -> float:
    try:
        value = float(objective(params))
    except (FamgpError, ValidationError, FloatingPointError, np.linalg.LinAlgError) as e:
        logger.debug(f"Rejected proposal {params.as_dict()}: {e}")
        return -np.inf
    return value if np.isfinite(value) else -np.inf


def _ascend(
    objective: Objective, gradient: Gradient, init: ParamVector, config: OptimizerConfig
) -> Tuple[ParamVector, TrainingTrace]:
    start = time.perf_counter()
    specs = init.specs
    current = init
    value = float(objective(current))
    grad = np.asarray(gradient(current), dtype=float) * current.grad_factor()
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        logger.error(f"Non-finite objective or gradient at {init.as_dict()}")
        raise NonFiniteError(f"Objective {value} or gradient {grad} is not finite at the initial point")

    step = config.initial_step
    u = current.unconstrained()
    records = [TrainingRecord(iter=0, lml=value, grad_norm=float(np.linalg.norm(grad)), step=step, wall_time=0.0)]
    reason = "max_iters"
    for iteration in range(1, config.max_iters + 1):
        if np.linalg.norm(grad) <= config.grad_tol * max(1.0, abs(value)):
            reason = "grad_tol"
            break
        while True:
            proposal = u + step * grad
            try:
                candidate = ParamVector.from_unconstrained(specs, proposal)
                candidate_value = _safe_objective(objective, candidate)
            except ValidationError:
                candidate_value = -np.inf
            if candidate_value > value:
                break
            step *= config.step_shrink
            if step < config.min_step:
                reason = "stalled"
                break
        if reason == "stalled":
            break
        candidate_grad = np.asarray(gradient(candidate), dtype=float) * candidate.grad_factor()
        if not np.all(np.isfinite(candidate_grad)):
            logger.warning(f"Non-finite gradient at {candidate.as_dict()}, stopping")
            reason = "stalled"
            break
        current, value, grad, u = candidate, candidate_value, candidate_grad, proposal
        records.append(
            TrainingRecord(
                iter=iteration,
                lml=value,
                grad_norm=float(np.linalg.norm(grad)),
                step=step,
                wall_time=time.perf_counter() - start,
            )
        )
        logger.debug(f"Iteration {iteration}: LML={value:.10g}, |grad|={np.linalg.norm(grad):.3g}, step={step:.3g}")
        step *= config.step_grow
    else:
        if np.linalg.norm(grad) <= config.grad_tol * max(1.0, abs(value)):
            reason = "grad_tol"

    trace = TrainingTrace(records=records, converged=reason != "max_iters", reason=reason)
    return current, trace


def optimize(
    objective: Objective,
    gradient: Gradient,
    init: ParamVector,
    config: Optional[OptimizerConfig] = None,
) -> Tuple[ParamVector, TrainingTrace]:
    """
    Maximize ``objective`` by gradient ascent with backtracking.

    ``gradient`` returns derivatives with respect to the constrained values; the
    step is taken in the unconstrained parametrization. A proposal is accepted
    only if it increases the objective, otherwise the step shrinks. With
    ``config.restarts`` > 0 further runs start from seeded perturbations of the
    initial point and the run with the highest final objective is returned.

    Raises
    ------
    NonFiniteError
        If the objective or gradient is not finite at ``init``.
    """
    config = config or OptimizerConfig()
    best, best_trace = _ascend(objective, gradient, init, config)
    if config.restarts:
        rng = np.random.default_rng(config.seed)
        u0 = init.unconstrained()
        for restart in range(1, config.restarts + 1):
            start = ParamVector.from_unconstrained(init.specs, u0 + rng.normal(0.0, config.restart_scale, u0.size))
            try:
                params, trace = _ascend(objective, gradient, start, config)
            except NonFiniteError as e:
                logger.warning(f"Restart {restart} skipped: {e}")
                continue
            logger.info(f"Restart {restart} finished at LML={trace.final_lml:.10g}")
            if trace.final_lml > best_trace.final_lml:
                best, best_trace = params, trace
    logger.info(
        f"Optimizer stopped after {best_trace.iterations} iterations ({best_trace.reason}), "
        f"LML={best_trace.final_lml:.10g}"
    )
    return best, best_trace
