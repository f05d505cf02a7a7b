import numpy as np
import pytest

from famgp.data import (
    CASE_COLUMNS,
    TRACE_COLUMNS,
    default_noise,
    gen_correlated,
    gen_sinusoids,
    load_training_data,
    read_cases_csv,
    read_columns,
    read_dataset_csv,
    read_predictions_csv,
    read_report,
    read_trace_csv,
    write_cases_csv,
    write_dataset_csv,
    write_predictions_csv,
    write_report,
    write_trace_csv,
)
from famgp.exceptions import DataFormatError, SizeGuardError
from famgp.models import BenchCase, BenchReport, Dataset, MODataset, Posterior, TrainingRecord, TrainingTrace


def test_sinusoids_are_deterministic_per_seed():
    """
    Test that the same seed draws the same dataset and another seed does not.
    """
    # Act
    first = gen_sinusoids(seed=11, N=50)
    second = gen_sinusoids(seed=11, N=50)
    other = gen_sinusoids(seed=12, N=50)

    # Assert
    np.testing.assert_array_equal(first.dataset.Y, second.dataset.Y)
    assert not np.allclose(first.dataset.Y, other.dataset.Y)


def test_noise_free_sinusoids_equal_truth():
    data = gen_sinusoids(seed=3, N=40, noise_sd=0.0)
    np.testing.assert_array_equal(data.dataset.Y, data.Y_true)
    np.testing.assert_allclose(data.truth(data.dataset.X), data.Y_true)


@pytest.mark.parametrize("k", [1, 2])
def test_sinusoid_derivatives_match_finite_difference(sinusoid_data, k):
    """
    Test the analytic derivatives of the generating function.
    """
    # Arrange
    X = np.linspace(-0.8, 0.8, 7)
    h = 1e-6

    # Act
    analytic = sinusoid_data.truth(X, k)
    numeric = (sinusoid_data.truth(X + h, k - 1) - sinusoid_data.truth(X - h, k - 1)) / (2 * h)

    # Assert
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-3)


def test_sinusoid_inputs_span_range():
    data = gen_sinusoids(seed=1, N=9, x_range=(-3.0, 5.0))
    assert data.dataset.X[0] == -3.0
    assert data.dataset.X[-1] == 5.0
    assert data.dataset.noise_variance == pytest.approx(0.01)


def test_correlated_draw_has_requested_shape(correlated_data):
    assert correlated_data.dataset.Y.shape == (30, 2)
    assert correlated_data.F_true.shape == (30, 2)
    assert correlated_data.dataset.noise_kind == "separable"
    assert np.all(np.abs(correlated_data.dataset.X) < 1.0)


def test_correlated_outputs_are_anticorrelated():
    data = gen_correlated(seed=0, N=200, l_se=0.1)
    correlation = np.corrcoef(data.F_true.T)[0, 1]
    assert correlation < -0.5


def test_correlated_size_guard():
    """
    Test that draws beyond the dense sampling guard are refused.
    """
    with pytest.raises(SizeGuardError, match="exceeds the guard"):
        gen_correlated(seed=0, N=100, max_nm=50)


def test_dataset_csv_round_trip_keeps_missing_values(mo_dataset_missing, tmp_path):
    # Arrange
    path = tmp_path / "data.csv"

    # Act
    write_dataset_csv(path, mo_dataset_missing.X, mo_dataset_missing.Y)
    X, Y = read_dataset_csv(path)

    # Assert
    np.testing.assert_array_equal(X, mo_dataset_missing.X)
    np.testing.assert_array_equal(Y, mo_dataset_missing.Y)


def test_single_output_csv_loads_as_dataset(tmp_path):
    """
    Test that one target column gives a single-output dataset without its missing rows.
    """
    # Arrange
    path = tmp_path / "data.csv"
    path.write_text("x,y1\n0.0,1.0\n0.5,\n1.0,3.0\n", encoding="utf-8")

    # Act
    dataset = load_training_data(path, noise_variance=0.2)

    # Assert
    assert isinstance(dataset, Dataset)
    np.testing.assert_array_equal(dataset.X, [0.0, 1.0])
    assert dataset.noise_variance == 0.2


def test_default_noise_is_tenth_of_variance():
    Y = np.array([1.0, -1.0, np.nan, 1.0, -1.0])
    assert default_noise(Y) == pytest.approx(0.1)
    assert default_noise(np.ones(4)) == 1.0


def test_multi_output_csv_loads_with_default_noise(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y1,y2\n0.0,1.0,2.0\n0.5,-1.0,\n1.0,1.0,4.0\n", encoding="utf-8")
    dataset = load_training_data(path)
    assert isinstance(dataset, MODataset)
    np.testing.assert_allclose(np.diag(dataset.noise), [0.1 * 8.0 / 9.0, 0.1])


def test_missing_column_raises(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("input,y1\n0.0,1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="missing column 'x'"):
        read_dataset_csv(path)


def test_non_numeric_value_raises(tmp_path):
    """
    Test that a non-numeric field names the file, line and column.
    """
    # Arrange
    path = tmp_path / "data.csv"
    path.write_text("x,y1\n0.0,1.0\n0.5,abc\n", encoding="utf-8")

    # Act & Assert
    with pytest.raises(DataFormatError, match="data.csv:3: column 'y1' has non-numeric value 'abc'"):
        read_dataset_csv(path)


def test_empty_file_raises(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataFormatError, match="missing header row"):
        read_columns(path, required=("x",))


def test_missing_input_value_raises(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("x,y1\n,1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="column 'x' has missing values"):
        read_dataset_csv(path)


def test_predictions_csv_uses_one_based_outputs(tmp_path):
    """
    Test the prediction table layout for a two-output posterior with variances.
    """
    # Arrange
    X_star = np.array([0.0, 0.5])
    posterior = Posterior(
        mean=np.array([1.0, 2.0, 3.0, 4.0]), variance=np.array([0.1, 0.2, 0.3, 0.4]), outputs=(0, 1)
    )

    # Act
    columns = read_predictions_csv(write_predictions_csv(tmp_path / "pred.csv", X_star, posterior))

    # Assert
    assert list(columns) == ["x", "mean_1", "var_1", "mean_2", "var_2"]
    np.testing.assert_array_equal(columns["mean_2"], [3.0, 4.0])
    np.testing.assert_array_equal(columns["var_1"], [0.1, 0.2])


def test_trace_csv(tmp_path):
    trace = TrainingTrace(
        records=[
            TrainingRecord(iter=0, lml=-10.0, grad_norm=3.0, step=0.01, wall_time=0.0),
            TrainingRecord(iter=1, lml=-9.5, grad_norm=1.0, step=0.015, wall_time=0.002),
        ],
        converged=False,
        reason="max_iters",
    )
    path = write_trace_csv(tmp_path / "trace.csv", trace)
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert read_trace_csv(path) == trace.records


def test_cases_csv_and_report(tmp_path):
    """
    Test the benchmark tables, including a case whose timing is missing.
    """
    # Arrange
    cases = [
        BenchCase(method="exact", N=100, seconds=0.5, rmse=0.1, seed=1, config_hash="abc"),
        BenchCase(method="exact", N=5000, seed=1, config_hash="abc", status="skipped: size guard"),
    ]
    report = BenchReport(experiment="scaling", cases=cases, summary={"slope_exact": 2.9})

    # Act
    read_back = read_cases_csv(write_cases_csv(tmp_path / "cases.csv", cases))
    reloaded = read_report(write_report(tmp_path / "report.json", report))

    # Assert
    assert (tmp_path / "cases.csv").read_text(encoding="utf-8").splitlines()[0] == ",".join(CASE_COLUMNS)
    assert read_back[0].seconds == 0.5
    assert read_back[1].seconds is None
    assert read_back[1].status == "skipped: size guard"
    assert reloaded == report
