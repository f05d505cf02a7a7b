import numpy as np
import pytest
from fastapi.testclient import TestClient

from app import app, store
from famgp.core import fit
from famgp.data import gen_correlated, gen_sinusoids
from famgp.models import Dataset, KernelKind, MODataset, OptimizerConfig, parse_params

SE = KernelKind.SQUARED_EXPONENTIAL
PERIODIC = KernelKind.PERIODIC
CHEBYSHEV = KernelKind.CHEBYSHEV


def finite_difference(function, value: float, step: float = 1e-6) -> float:
    """Central difference of a scalar function, with a step relative to ``value``."""
    h = step * max(1.0, abs(value))
    return (function(value + h) - function(value - h)) / (2.0 * h)


@pytest.fixture
def rng():
    """
    Provide a seeded generator so every test draws the same numbers.
    """
    return np.random.default_rng(1234)


@pytest.fixture
def se_params():
    return parse_params(SE, {"l_se": 0.3})


@pytest.fixture
def periodic_params():
    return parse_params(PERIODIC, {"f_pr": 2.0, "w_pr": 0.6})


@pytest.fixture
def chebyshev_params():
    return parse_params(CHEBYSHEV, {"a": 0.6, "b": 0.4})


@pytest.fixture
def small_dataset(rng):
    """
    Provide a noisy sine wave on an interval that is not [-1, 1], so the input transform is exercised.
    """
    X = np.linspace(-2.0, 3.0, 40)
    Y = np.sin(1.5 * X) + 0.1 * rng.standard_normal(X.size)
    return Dataset(X=X, Y=Y, noise_variance=0.05)


@pytest.fixture
def heteroscedastic_dataset(small_dataset, rng):
    noise = rng.uniform(0.02, 0.1, small_dataset.n_samples)
    return Dataset(X=small_dataset.X, Y=small_dataset.Y, noise_variance=noise)


@pytest.fixture
def sinusoid_data():
    return gen_sinusoids(seed=7, N=60, noise_sd=0.1)


@pytest.fixture
def correlated_data():
    """
    Provide a small two-output draw with strongly negative output correlation.
    """
    return gen_correlated(seed=3, N=30, l_se=0.3)


@pytest.fixture
def mo_dataset(correlated_data):
    return correlated_data.dataset


@pytest.fixture
def mo_dataset_missing(mo_dataset):
    """
    Provide the two-output dataset with the second output hidden on the last third of the samples.
    """
    Y = np.array(mo_dataset.Y)
    Y[20:, 1] = np.nan
    Y[3, 0] = np.nan
    return MODataset(X=mo_dataset.X, Y=Y, noise_kind=mo_dataset.noise_kind, noise=mo_dataset.noise)


@pytest.fixture
def fitted_model(small_dataset, se_params):
    return fit(small_dataset, SE, se_params, 15)


@pytest.fixture
def quick_optimizer():
    return OptimizerConfig(max_iters=25, initial_step=0.05)


###### FIXTURES FOR THE HTTP APP ######
#######################################################################################
@pytest.fixture(scope="function")
def test_client():
    """
    Fixture to provide a FastAPI test client with no model loaded.
    """
    previous, previous_dir = store.model, store.model_dir
    store.model = None
    yield TestClient(app)
    store.model, store.model_dir = previous, previous_dir


@pytest.fixture(scope="function")
def served_model(test_client, fitted_model):
    """
    Fixture that serves ``fitted_model`` through the test client.
    """
    store.model = fitted_model
    return fitted_model
