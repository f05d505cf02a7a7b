from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import ValidationError

from famgp.config import MODEL_DIR, MODEL_PATH
from famgp.core import predict_derivative
from famgp.exceptions import FamgpError
from famgp.models import ModelRequest, MOFittedModel, PredictRequest, PredictResponse
from famgp.multioutput import mo_predict
from famgp.serialization import AnyModel, load_model
from famgp.utils import configure_logging, logger

app = FastAPI(title="famgp")


class ModelStore:
    """
    The model currently served.

    Attributes
    ----------
    path : str
        Model JSON loaded at startup.
    model_dir : Path
        Directory that POST /model may load from.
    model : FittedModel or MOFittedModel, optional
        None until a model is loaded.
    """

    def __init__(self, path: str = MODEL_PATH, model_dir: str = MODEL_DIR):
        self.path = path
        self.model_dir = Path(model_dir)
        self.model: Optional[AnyModel] = None

    def load(self, path: Optional[str] = None) -> AnyModel:
        """
        Load a model JSON and make it the served model.

        Raises
        ------
        FileNotFoundError
            If the file does not exist.
        DataFormatError
            If the file is not a valid model document.
        """
        path = path or self.path
        self.model = load_model(path)
        self.path = path
        logger.info(f"Serving model from {path}")
        return self.model

    def resolve(self, name: str) -> Path:
        """
        Path of ``name`` inside the model directory.

        Raises
        ------
        PermissionError
            If ``name`` points outside the model directory.
        """
        root = self.model_dir.resolve()
        path = (root / name).resolve()
        if not path.is_relative_to(root):
            raise PermissionError(f"{name} is outside the model directory {root}")
        return path

    @property
    def n_outputs(self) -> Optional[int]:
        if self.model is None:
            return None
        return self.model.n_outputs if isinstance(self.model, MOFittedModel) else 1


store = ModelStore()


@app.on_event("startup")
async def startup_event():
    """
    Load the model named by FAMGP_MODEL_PATH, if present.

    A missing or invalid file leaves the app running without a model;
    prediction requests then fail with 503 until POST /model succeeds.
    """
    configure_logging()
    if not Path(store.path).exists():
        logger.warning(f"No model file at {store.path}; waiting for POST /model")
        return
    try:
        store.load()
    except FamgpError as e:
        logger.error(f"Failed to load model from {store.path}: {e}")


@app.get("/health")
def health():
    """
    Report whether a model is loaded.

    Returns
    -------
    dict
        ``status``, ``model_loaded``, ``kernel_kind`` and ``outputs``.
    """
    model = store.model
    return {
        "status": "ok",
        "model_loaded": model is not None,
        "kernel_kind": None if model is None else model.basis.kind.value,
        "outputs": store.n_outputs,
    }


@app.post("/predict", response_model=PredictResponse)
def predict(request: PredictRequest):
    """
    Predict the served model's mean (and variance) at the requested inputs.

    Parameters
    ----------
    request : PredictRequest

    Returns
    -------
    PredictResponse

    Raises
    ------
    HTTPException
        503 when no model is loaded, 400 for inputs the model rejects, 500 otherwise.
    """
    model = store.model
    if model is None:
        raise HTTPException(status_code=503, detail="No model loaded")
    X_star = np.asarray(request.x, dtype=float)
    try:
        if isinstance(model, MOFittedModel):
            posterior = mo_predict(model, X_star, request.outputs, variance=request.variance, k=request.derivative)
            outputs = list(posterior.outputs)
        else:
            if request.outputs not in (None, [0]):
                raise HTTPException(status_code=400, detail=f"Single-output model has no outputs {request.outputs}")
            posterior = predict_derivative(model, X_star, request.derivative, variance=request.variance)
            outputs = [0]
    except HTTPException:
        raise
    except (FamgpError, ValidationError, ValueError) as e:
        logger.error(f"Rejected prediction request: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Prediction failed: {e}")
        raise HTTPException(status_code=500, detail="Prediction failed")

    variance = posterior.variance_matrix() if request.variance else None
    return PredictResponse(
        x=request.x,
        outputs=outputs,
        derivative=request.derivative,
        mean=posterior.mean_matrix().T.tolist(),
        variance=None if variance is None else variance.T.tolist(),
    )


@app.post("/model")
def reload_model(request: ModelRequest):
    """
    Replace the served model with ``request.path``, relative to the model directory.

    Raises
    ------
    HTTPException
        403 for paths outside the model directory, 404 if the file does not exist,
        400 if it is not a valid model document.
    """
    try:
        store.load(str(store.resolve(request.path)))
    except PermissionError as e:
        logger.warning(f"Refused model path: {e}")
        raise HTTPException(status_code=403, detail="Model path must lie inside the model directory")
    except (FileNotFoundError, IsADirectoryError):
        raise HTTPException(status_code=404, detail=f"Model file not found: {request.path}")
    except FamgpError as e:
        logger.error(f"Failed to load model from {request.path}: {e}")
        raise HTTPException(status_code=400, detail="Invalid model file")
    return health()
