import numpy as np
import pytest

from famgp.exceptions import NonFiniteError, ParameterError
from famgp.models import OptimizerConfig
from famgp.optimizer import LOGIT_EPSILON, Memo, ParamVector, bounded, free, optimize, positive

TARGET = np.array([2.0, -1.0])


def bowl(params: ParamVector) -> float:
    return float(-np.sum((params.values - TARGET) ** 2))


def bowl_gradient(params: ParamVector) -> np.ndarray:
    return -2.0 * (params.values - TARGET)


def test_ascent_reaches_maximum_of_concave_bowl():
    """
    Test that the optimizer finds the maximum of a quadratic.
    """
    # Arrange
    init = ParamVector.from_dict([free("x"), free("y")], {"x": 0.0, "y": 0.0})

    # Act
    best, trace = optimize(bowl, bowl_gradient, init, OptimizerConfig(max_iters=500, initial_step=0.1))

    # Assert
    assert trace.converged
    assert trace.reason in ("grad_tol", "stalled")
    np.testing.assert_allclose(best.values, TARGET, atol=1e-4)


def test_trace_is_monotone():
    init = ParamVector.from_dict([free("x"), free("y")], {"x": 5.0, "y": 3.0})
    _, trace = optimize(bowl, bowl_gradient, init, OptimizerConfig(max_iters=50, initial_step=0.05))
    lml = [record.lml for record in trace.records]
    assert all(later > earlier for earlier, later in zip(lml, lml[1:]))
    assert trace.records[0].iter == 0


def test_positive_parameter_stays_positive():
    """
    Test that a log-transformed parameter converges to its optimum from below.
    """
    # Arrange
    init = ParamVector.from_dict([positive("s")], {"s": 0.1})

    # Act
    best, _ = optimize(
        lambda p: float(-((p.values[0] - 3.0) ** 2)),
        lambda p: np.array([-2.0 * (p.values[0] - 3.0)]),
        init,
        OptimizerConfig(max_iters=500, initial_step=0.1),
    )

    # Assert
    assert best.as_dict()["s"] == pytest.approx(3.0, abs=1e-4)


def test_max_iterations_reports_not_converged():
    """
    Test that hitting the iteration cap is reported as not converged.
    """
    # Arrange
    init = ParamVector.from_dict([free("x"), free("y")], {"x": 0.0, "y": 0.0})

    # Act
    _, trace = optimize(bowl, bowl_gradient, init, OptimizerConfig(max_iters=2, initial_step=1e-3))

    # Assert
    assert not trace.converged
    assert trace.reason == "max_iters"
    assert trace.iterations == 2


def test_rejected_proposals_shrink_until_stalled():
    """
    Test that objectives raising package errors are treated as rejected proposals.
    """

    # Arrange
    def objective(params):
        if params.values[0] > 1.0:
            raise ParameterError("outside the feasible region")
        return float(params.values[0])

    init = ParamVector.from_dict([free("x")], {"x": 0.0})

    # Act
    best, trace = optimize(objective, lambda p: np.array([1.0]), init, OptimizerConfig(max_iters=1000))

    # Assert
    assert trace.reason == "stalled"
    assert trace.converged
    assert best.values[0] == pytest.approx(1.0, abs=1e-6)


def test_non_finite_initial_point_raises():
    init = ParamVector.from_dict([free("x")], {"x": 0.0})
    with pytest.raises(NonFiniteError, match="initial point"):
        optimize(lambda p: float("nan"), lambda p: np.array([0.0]), init)


def test_restarts_are_reproducible():
    """
    Test that seeded restarts give identical results and never do worse than the first run.
    """
    # Arrange
    def objective(p):
        x = p.values[0]
        return float(-((x**2 - 1.0) ** 2) + 0.3 * x)

    def gradient(p):
        x = p.values[0]
        return np.array([-4.0 * x * (x**2 - 1.0) + 0.3])

    init = ParamVector.from_dict([free("x")], {"x": -1.0})
    config = OptimizerConfig(max_iters=200, initial_step=0.05, restarts=4, restart_scale=2.0, seed=5)

    # Act
    first, first_trace = optimize(objective, gradient, init, config)
    second, second_trace = optimize(objective, gradient, init, config)
    _, single = optimize(objective, gradient, init, config.model_copy(update={"restarts": 0}))

    # Assert
    np.testing.assert_array_equal(first.values, second.values)
    assert first_trace.final_lml == second_trace.final_lml
    assert first_trace.final_lml >= single.final_lml


@pytest.mark.parametrize(
    "spec, value",
    [(positive("l_se"), 0.4), (bounded("a", LOGIT_EPSILON, 1.0), 0.3), (bounded("b", 0.0, 1.0), 0.9), (free("L"), -0.7)],
)
def test_transforms_round_trip_with_chain_rule_factor(spec, value):
    """
    Test that each transform inverts and that its derivative matches central differences.
    """
    # Arrange
    params = ParamVector.from_dict([spec], {spec.name: value})
    u = params.unconstrained()
    h = 1e-6

    # Act
    back = ParamVector.from_unconstrained([spec], u)
    numeric = (
        ParamVector.from_unconstrained([spec], u + h).values[0] - ParamVector.from_unconstrained([spec], u - h).values[0]
    ) / (2 * h)

    # Assert
    assert back.values[0] == pytest.approx(value, rel=1e-12)
    assert params.grad_factor()[0] == pytest.approx(numeric, rel=1e-6)


def test_memo_evaluates_each_point_once():
    # Arrange
    memo = Memo(lambda p: (bowl(p), bowl_gradient(p)))
    params = ParamVector.from_dict([free("x"), free("y")], {"x": 1.0, "y": 1.0})

    # Act
    memo.objective(params)
    memo.gradient(params)

    # Assert
    assert memo.calls == 1
