import numpy as np
import pytest

from famgp.data import gen_correlated, read_cases_csv, read_predictions_csv, read_report
from famgp.experiments import (
    bench_correlation,
    bench_rmse_vs_eigs,
    bench_rmse_vs_samples,
    bench_scaling,
    config_hash,
    loglog_slope,
    median_time,
    odd,
    rescale_length,
    rmse,
    run_experiment,
    split_for_prediction,
)
from famgp.models import DatasetSpec, ExperimentConfig, OptimizerConfig

FAST_OPTIMIZER = OptimizerConfig(max_iters=5, initial_step=0.05)


@pytest.fixture
def scaling_config(tmp_path):
    return ExperimentConfig(
        experiment="scaling",
        n=8,
        sizes=[50, 100],
        iterations=2,
        repeats=1,
        exact_max_n=60,
        out_dir=str(tmp_path),
    )


def test_helpers():
    assert loglog_slope([10.0, 100.0, 1000.0], [1.0, 1e3, 1e6]) == pytest.approx(3.0)
    assert loglog_slope([10.0], [1.0]) is None
    assert odd(20) == 21 and odd(21) == 21
    assert rmse(np.array([1.0, 3.0]), np.array([0.0, 0.0])) == pytest.approx(np.sqrt(5.0))
    assert median_time(lambda: None, 3) >= 0.0


def test_config_hash_tracks_configuration():
    base = ExperimentConfig(experiment="scaling")
    assert config_hash(base) == config_hash(ExperimentConfig(experiment="scaling"))
    assert config_hash(base) != config_hash(ExperimentConfig(experiment="scaling", n=30))


def test_scaling_skips_exact_above_guard(scaling_config):
    """
    Test that the scaling suite times every method and skips the dense GP past its guard.
    """
    # Act
    report = bench_scaling(scaling_config)

    # Assert
    assert len(report.cases) == 10
    skipped = [case for case in report.cases if case.status == "skipped"]
    assert [(case.method, case.N) for case in skipped] == [("exact", 100)]
    assert all(case.seconds > 0 for case in report.cases if case.status == "ok")
    assert report.summary["slope_exact"] is None
    assert isinstance(report.summary["slope_ch"], float)
    assert report.environment["cpu_count"] is not None


def test_rmse_vs_samples(tmp_path):
    """
    Test the accuracy sweep over sample counts on a tiny configuration.
    """
    # Arrange
    config = ExperimentConfig(
        experiment="rmse-samples",
        n=10,
        sizes=[40, 80],
        seeds=[0],
        methods=["se", "ch", "exact"],
        exact_max_n=50,
        optimizer=FAST_OPTIMIZER,
        out_dir=str(tmp_path),
    )

    # Act
    report = bench_rmse_vs_samples(config)

    # Assert
    assert len(report.cases) == 6
    assert set(report.summary["median_rmse_se"]) == {"40", "80"}
    assert set(report.summary["median_rmse_exact"]) == {"40"}
    for case in report.cases:
        if case.status != "skipped":
            assert case.rmse > 0
            assert case.status in ("ok", "max_iters")


def test_rmse_vs_eigenvalue_count(tmp_path):
    # Arrange
    config = ExperimentConfig(
        experiment="rmse-eigs",
        eig_counts=[5, 10],
        dataset=DatasetSpec(n_samples=40),
        optimizer=FAST_OPTIMIZER,
        out_dir=str(tmp_path),
    )

    # Act
    report = bench_rmse_vs_eigs(config)

    # Assert
    assert [case.n for case in report.cases] == [5, 10, 0]
    assert all(0.0 < case.extra["eigenvalue_mass"] <= 1.0 + 1e-12 for case in report.cases[:2])
    assert report.summary["exact_rmse"] == report.cases[-1].rmse


def test_correlation_writes_prediction_tables(tmp_path):
    """
    Test the correlation study on a small draw, including the dense reference.
    """
    # Arrange
    config = ExperimentConfig(
        experiment="correlation",
        n=10,
        seeds=[0],
        dataset=DatasetSpec(generator="correlated", n_samples=30, l_se=0.3),
        optimizer=FAST_OPTIMIZER,
        out_dir=str(tmp_path),
    )

    # Act
    report = bench_correlation(config)

    # Assert
    assert [case.method for case in report.cases] == ["famgp", "famgp_identity", "exact", "exact_identity"]
    for method in ("famgp", "famgp_identity", "exact", "exact_identity"):
        columns = read_predictions_csv(tmp_path / f"correlation_seed0_{method}.csv")
        assert list(columns) == ["x", "mean_2", "var_2"]
        assert columns["x"].size == 30
    assert "median_correlation_famgp" in report.summary
    assert "median_l_se_exact" in report.summary
    assert report.summary["test_rmse_ratio"] > 0
    assert report.cases[1].extra["correlation"] == 0.0


def test_split_hides_second_output():
    dataset = gen_correlated(seed=1, N=12).dataset
    observed = split_for_prediction(dataset, 8)
    assert np.all(np.isnan(observed.Y[8:, 1]))
    np.testing.assert_array_equal(observed.Y[:, 0], dataset.Y[:, 0])


def test_run_experiment_writes_report_and_plot(scaling_config, tmp_path):
    # Act
    report = run_experiment(scaling_config, render=True)

    # Assert
    assert read_report(tmp_path / "scaling_report.json") == report
    assert len(read_cases_csv(tmp_path / "scaling_cases.csv")) == len(report.cases)
    assert (tmp_path / "scaling.png").stat().st_size > 0


def test_rescale_length_maps_between_input_ranges():
    """
    Test that a length-scale learned on the first two thirds of [-1, 1] is shortened for the full range.
    """
    # Arrange
    training = np.linspace(-1.0, 1.0 / 3.0, 7)
    full = np.linspace(-1.0, 1.0, 7)

    # Act & Assert
    assert rescale_length(0.15, training, full) == pytest.approx(0.1)
    assert rescale_length(0.1, full, full) == pytest.approx(0.1)


def test_benchmarks_are_deterministic_for_a_seed(tmp_path):
    """
    Test that rerunning an accuracy sweep and the correlation study with the same config reproduces every row.
    """
    # Arrange
    sweep = ExperimentConfig(
        experiment="rmse-samples",
        n=10,
        sizes=[40],
        seeds=[0, 1],
        methods=["se", "ch"],
        optimizer=FAST_OPTIMIZER,
        out_dir=str(tmp_path),
    )
    correlation = ExperimentConfig(
        experiment="correlation",
        n=10,
        seeds=[2],
        methods=["famgp"],
        dataset=DatasetSpec(generator="correlated", n_samples=30, l_se=0.3),
        optimizer=FAST_OPTIMIZER,
        out_dir=str(tmp_path),
    )

    # Act
    first = [bench_rmse_vs_samples(sweep), bench_correlation(correlation)]
    second = [bench_rmse_vs_samples(sweep), bench_correlation(correlation)]

    # Assert
    for before, after in zip(first, second):
        assert [case.model_dump() for case in before.cases] == [case.model_dump() for case in after.cases]
        assert before.summary == after.summary
