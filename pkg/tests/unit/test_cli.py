import json

import numpy as np
import pytest

from famgp.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, load_config, main
from famgp.data import read_columns, read_report, read_trace_csv
from famgp.models import FittedModel, KernelKind, MOFittedModel
from famgp.serialization import load_model


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """
    Run each command inside a temporary directory so default outputs and the log file stay there.
    """
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run(*argv):
    return main(["--log-level", "WARNING", *argv])


@pytest.fixture
def sinusoid_csv(workdir):
    assert run("gen-data", "sinusoids", "--n-samples", "60", "--seed", "4", "--out-dir", "data") == EXIT_OK
    return workdir / "data" / "sinusoids.csv"


def test_gen_data_writes_dataset_and_truth(sinusoid_csv):
    """
    Test that gen-data writes the noisy samples and the noise-free values side by side.
    """
    # Act
    data = read_columns(sinusoid_csv)
    truth = read_columns(sinusoid_csv.with_name("sinusoids_truth.csv"))

    # Assert
    assert list(data) == ["x", "y1"]
    assert data["x"].size == 60
    np.testing.assert_array_equal(data["x"], truth["x"])
    assert not np.array_equal(data["y1"], truth["y1"])


def test_gen_data_is_reproducible(workdir):
    run("gen-data", "correlated", "--n-samples", "15", "--seed", "2", "--output", "a.csv")
    run("gen-data", "correlated", "--n-samples", "15", "--seed", "2", "--output", "b.csv")
    first, second = read_columns(workdir / "a.csv"), read_columns(workdir / "b.csv")
    assert list(first) == ["x", "y1", "y2"]
    np.testing.assert_array_equal(first["y2"], second["y2"])


def test_fit_then_predict_on_grid(sinusoid_csv, workdir):
    """
    Test the fit and predict round trip through files.
    """
    # Act
    status = run("fit", "--data", str(sinusoid_csv), "--kernel", "squared-exponential", "--n", "12", "--max-iters", "30")
    predicted = run("predict", "--model", "results/model.json", "--grid", "-1", "1", "11", "--variance")

    # Assert
    assert status in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert predicted == EXIT_OK
    assert isinstance(load_model(workdir / "results" / "model.json"), FittedModel)
    assert len(read_trace_csv(workdir / "results" / "trace.csv")) >= 2
    columns = read_columns(workdir / "results" / "predictions.csv")
    assert list(columns) == ["x", "mean_1", "var_1"]
    assert columns["x"].size == 11
    assert np.all(columns["var_1"] > 0)


def test_fit_stopping_at_iteration_limit_exits_two(sinusoid_csv):
    status = run("fit", "--data", str(sinusoid_csv), "--n", "10", "--max-iters", "1")
    assert status == EXIT_NOT_CONVERGED


def test_fit_reads_config_file(sinusoid_csv, workdir):
    """
    Test that --config supplies the kernel and truncation and flags override it.
    """
    # Arrange
    config = workdir / "config.json"
    config.write_text(json.dumps({"kernel": "chebyshev", "n": 9, "optimizer": {"max_iters": 3}}), encoding="utf-8")

    # Act
    run("fit", "--config", str(config), "--data", str(sinusoid_csv), "--n", "7")

    # Assert
    model = load_model(workdir / "results" / "model.json")
    assert model.basis.kind == KernelKind.CHEBYSHEV
    assert model.basis.n == 7


def test_multioutput_fit_and_predict_selected_output(workdir):
    # Arrange
    run("gen-data", "correlated", "--n-samples", "20", "--l-se", "0.3", "--output", "mo.csv")

    # Act
    fitted = run("fit", "--data", "mo.csv", "--n", "8", "--max-iters", "5")
    predicted = run("predict", "--model", "results/model.json", "--data", "mo.csv", "--outputs", "2", "--output", "mo_pred.csv")

    # Assert
    assert fitted in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert predicted == EXIT_OK
    assert isinstance(load_model(workdir / "results" / "model.json"), MOFittedModel)
    assert list(read_columns(workdir / "mo_pred.csv")) == ["x", "mean_2"]


def test_predict_derivative(sinusoid_csv, workdir):
    run("fit", "--data", str(sinusoid_csv), "--n", "10", "--max-iters", "3")
    assert run("predict", "--model", "results/model.json", "--grid", "-0.5", "0.5", "5", "--derivative", "1") == EXIT_OK
    assert read_columns(workdir / "results" / "predictions.csv")["mean_1"].size == 5


def test_missing_column_is_reported(workdir, capsys):
    """
    Test that a malformed dataset exits with status 1 and names the missing column.
    """
    # Arrange
    (workdir / "bad.csv").write_text("input,y1\n0.0,1.0\n", encoding="utf-8")

    # Act
    status = run("fit", "--data", "bad.csv")

    # Assert
    assert status == EXIT_ERROR
    assert "missing column 'x'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["fit", "--data", "x.csv", "--kernel", "matern"],
        ["fit"],
        ["fit", "--data", "x.csv", "--param", "l_se"],
        ["predict", "--model", "model.json"],
        ["bench", "unknown-suite"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_one(workdir, argv):
    assert run(*argv) == EXIT_ERROR


def test_missing_model_file_exits_one(workdir, capsys):
    assert run("predict", "--model", "absent.json", "--grid", "0", "1", "3") == EXIT_ERROR
    assert "absent.json" in capsys.readouterr().err


def test_invalid_config_exits_one(sinusoid_csv, workdir, capsys):
    config = workdir / "config.json"
    config.write_text(json.dumps({"optimizer": {"bogus": 1}}), encoding="utf-8")
    assert run("fit", "--config", str(config), "--data", str(sinusoid_csv)) == EXIT_ERROR
    assert "invalid input" in capsys.readouterr().err


def test_load_config_ignores_unset_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"n": 33, "optimizer": {"max_iters": 7}}), encoding="utf-8")
    config = load_config(str(path), {"n": None, "optimizer": {"max_iters": None, "grad_tol": 1e-3}})
    assert config.n == 33
    assert config.optimizer.max_iters == 7
    assert config.optimizer.grad_tol == 1e-3


def test_bench_writes_report(workdir):
    """
    Test a tiny scaling run through the command line.
    """
    # Act
    status = run(
        "bench", "scaling", "--sizes", "30", "60", "--n", "6", "--iterations", "1", "--repeats", "1",
        "--methods", "se", "ch", "--out-dir", "results",
    )

    # Assert
    assert status == EXIT_OK
    report = read_report(workdir / "results" / "scaling_report.json")
    assert {case.method for case in report.cases} == {"se", "ch"}
    assert (workdir / "results" / "scaling_cases.csv").exists()
