import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from famgp.config import MODEL_SCHEMA_VERSION
from famgp.exceptions import DataFormatError
from famgp.models import (
    CoregionalizationMatrix,
    FittedModel,
    FloatArray,
    InputTransform,
    KernelKind,
    MercerBasis,
    MOFittedModel,
    NoiseKind,
    parse_params,
)
from famgp.utils import logger

AnyModel = Union[FittedModel, MOFittedModel]


class ModelDocument(BaseModel):
    """
    Flat on-disk layout of a fitted model.

    Attributes
    ----------
    schema_version : int
    kernel_kind : KernelKind
    params : dict
        Kernel hyperparameters, including variant switches.
    n : int
        Retained eigenpairs.
    transform : InputTransform
    noise_variance : float or np.ndarray
        Noise the model was fitted with. For multi-output models this is the
        noise covariance in the layout given by ``noise_kind``.
    lambda : np.ndarray
        Retained eigenvalues, shape (n,).
    alpha_prime, G : np.ndarray
        Posterior mean and covariance of the basis weights, row-major.
    requested_n, output_scale :
        Single- and multi-output extras: eigenpairs asked for, and the signal variance.
    L, noise_kind, noise_scale :
        Multi-output extras; ``L`` is the Cholesky factor of K_f and marks the document as multi-output.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, populate_by_name=True, extra="forbid")

    schema_version: int
    kernel_kind: KernelKind
    params: Dict[str, Any]
    n: int = Field(ge=1)
    transform: InputTransform
    noise_variance: FloatArray
    lam: FloatArray = Field(alias="lambda")
    alpha_prime: FloatArray
    G: FloatArray
    requested_n: Optional[int] = Field(default=None, ge=1)
    output_scale: Optional[float] = Field(default=None, gt=0)
    L: Optional[FloatArray] = None
    noise_kind: Optional[NoiseKind] = None
    noise_scale: Optional[float] = Field(default=None, gt=0)


def model_to_dict(model: AnyModel) -> dict:
    """Versioned JSON-ready document for a fitted model."""
    basis = model.basis
    document = ModelDocument(
        schema_version=MODEL_SCHEMA_VERSION,
        kernel_kind=basis.kind,
        params=basis.params.model_dump(mode="json", exclude={"kind"}),
        n=basis.n,
        requested_n=basis.requested_n,
        transform=model.transform,
        noise_variance=model.noise if isinstance(model, MOFittedModel) else model.noise_variance,
        lam=basis.lam,
        alpha_prime=model.alpha_prime,
        G=model.G,
    )
    if isinstance(model, MOFittedModel):
        document = document.model_copy(
            update={"L": model.coregionalization.L, "noise_kind": model.noise_kind, "noise_scale": model.noise_scale}
        )
    else:
        document = document.model_copy(update={"output_scale": model.output_scale})
    return document.model_dump(mode="json", by_alias=True, exclude_none=True)


def _basis_from(document: ModelDocument) -> MercerBasis:
    return MercerBasis(
        params=parse_params(document.kernel_kind, document.params),
        n=document.n,
        requested_n=document.requested_n or document.n,
        lam=document.lam,
    )


def model_from_dict(document: dict) -> AnyModel:
    """
    Rebuild a fitted model from its document.

    Raises
    ------
    DataFormatError
        On an unknown schema version or a document that does not validate.
    """
    version = document.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise DataFormatError(f"Unsupported model schema_version {version!r}, expected {MODEL_SCHEMA_VERSION}")
    try:
        parsed = ModelDocument.model_validate(document)
        basis = _basis_from(parsed)
        noise = float(parsed.noise_variance) if parsed.noise_variance.ndim == 0 else parsed.noise_variance
        if parsed.L is None:
            return FittedModel(
                basis=basis,
                transform=parsed.transform,
                alpha_prime=parsed.alpha_prime,
                G=parsed.G,
                noise_variance=noise,
                output_scale=parsed.output_scale or 1.0,
            )
        return MOFittedModel(
            basis=basis,
            transform=parsed.transform,
            coregionalization=CoregionalizationMatrix(L=parsed.L),
            alpha_prime=parsed.alpha_prime,
            G=parsed.G,
            noise_kind=parsed.noise_kind or "separable",
            noise=noise,
            noise_scale=parsed.noise_scale or 1.0,
        )
    except ValidationError as e:
        logger.error(f"Invalid model document: {e}")
        raise DataFormatError(f"Invalid model document: {e.error_count()} validation error(s)") from e


def save_model(model: AnyModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    logger.info(f"Saved model to {path}")
    return path


def load_model(path: Union[str, Path]) -> AnyModel:
    """
    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    DataFormatError
        If the file is not a valid model document.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        logger.error(f"Model file {path} is not JSON: {e}")
        raise DataFormatError(f"Model file {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise DataFormatError(f"Model file {path} must hold a JSON object")
    return model_from_dict(document)
