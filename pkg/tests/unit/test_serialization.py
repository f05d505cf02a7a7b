import json

import numpy as np
import pytest

from famgp.config import MODEL_SCHEMA_VERSION
from famgp.core import fit, predict
from famgp.exceptions import DataFormatError
from famgp.models import MOFittedModel
from famgp.multioutput import mo_fit, mo_predict
from famgp.serialization import load_model, model_from_dict, model_to_dict, save_model
from tests.conftest import PERIODIC, SE

X_STAR = np.linspace(-1.5, 2.5, 21)
DOCUMENT_KEYS = {"schema_version", "kernel_kind", "params", "n", "transform", "noise_variance", "lambda", "alpha_prime", "G"}
SINGLE_OUTPUT_KEYS = DOCUMENT_KEYS | {"requested_n", "output_scale"}
MULTI_OUTPUT_KEYS = DOCUMENT_KEYS | {"requested_n", "L", "noise_kind", "noise_scale"}


def test_saved_model_predicts_identically(fitted_model, tmp_path):
    """
    Test that a model reloaded from JSON predicts what the original predicts.
    """
    # Arrange
    path = save_model(fitted_model, tmp_path / "model.json")

    # Act
    loaded = load_model(path)

    # Assert
    before = predict(fitted_model, X_STAR)
    after = predict(loaded, X_STAR)
    np.testing.assert_allclose(after.mean, before.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(after.variance, before.variance, rtol=1e-12, atol=1e-12)
    assert loaded.basis.kind == SE


def test_periodic_model_round_trip_keeps_coefficient_variant(small_dataset, tmp_path):
    model = fit(small_dataset, PERIODIC, {"f_pr": 2.0, "w_pr": 0.6, "coefficients": "bessel"}, 11)
    loaded = load_model(save_model(model, tmp_path / "periodic.json"))
    assert loaded.basis.params.coefficients == "bessel"
    np.testing.assert_array_equal(loaded.basis.lam, model.basis.lam)


def test_multioutput_model_round_trip(mo_dataset, se_params, tmp_path):
    # Arrange
    model = mo_fit(mo_dataset, SE, se_params, 10, np.array([[1.0, -0.5], [-0.5, 1.0]]))

    # Act
    loaded = load_model(save_model(model, tmp_path / "mo.json"))

    # Assert
    assert isinstance(loaded, MOFittedModel)
    np.testing.assert_allclose(loaded.coregionalization.K_f, model.coregionalization.K_f, rtol=1e-12)
    np.testing.assert_allclose(mo_predict(loaded, X_STAR[:5]).mean, mo_predict(model, X_STAR[:5]).mean, rtol=1e-12)


def test_document_layout_is_flat(fitted_model):
    """
    Test the top-level keys of a single-output model document.
    """
    # Act
    document = model_to_dict(fitted_model)

    # Assert
    assert set(document) == SINGLE_OUTPUT_KEYS
    assert document["schema_version"] == MODEL_SCHEMA_VERSION
    assert document["kernel_kind"] == "squared-exponential"
    assert document["params"]["l_se"] == 0.3
    assert document["lambda"] == fitted_model.basis.lam.tolist()
    assert len(document["G"]) == document["n"] == 15


def test_multioutput_document_adds_similarity_factor(mo_dataset, se_params):
    model = mo_fit(mo_dataset, SE, se_params, 10, np.array([[1.0, -0.5], [-0.5, 1.0]]))
    document = model_to_dict(model)
    assert set(document) == MULTI_OUTPUT_KEYS
    assert np.array(document["L"]).shape == (2, 2)
    assert np.array(document["noise_variance"]).shape == (2, 2)


def test_unsupported_schema_version_raises(fitted_model):
    """
    Test that a document from another schema version is refused.
    """
    # Arrange
    document = model_to_dict(fitted_model)
    document["schema_version"] = MODEL_SCHEMA_VERSION + 1

    # Act & Assert
    with pytest.raises(DataFormatError, match="Unsupported model schema_version"):
        model_from_dict(document)


def test_unknown_key_raises(fitted_model):
    document = model_to_dict(fitted_model)
    document["model_type"] = "sparse"
    with pytest.raises(DataFormatError, match="Invalid model document"):
        model_from_dict(document)


def test_invalid_model_body_raises(fitted_model):
    document = model_to_dict(fitted_model)
    del document["G"]
    with pytest.raises(DataFormatError, match="Invalid model document"):
        model_from_dict(document)


def test_non_json_file_raises(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("not json", encoding="utf-8")
    with pytest.raises(DataFormatError, match="not valid JSON"):
        load_model(path)


def test_json_array_file_raises(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps([1, 2, 3]), encoding="utf-8")
    with pytest.raises(DataFormatError, match="must hold a JSON object"):
        load_model(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "absent.json")
