from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModelKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC_REGRESSION = "logistic_regression"
    MLP = "mlp"


class DatasetKind(str, Enum):
    BLOBS = "blobs"
    NOISY_QUADRATIC = "noisy_quadratic"


class CurvatureSpec(BaseModel):
    """Spectrum of the quadratic's curvature matrix A = Q diag(eigenvalues) Qᵀ.

    Without eigenvalues A is the identity; without a rotation seed Q = I.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    eigenvalues: Optional[Tuple[float, ...]] = None
    rotation_seed: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _non_negative(self) -> "CurvatureSpec":
        if self.eigenvalues is not None and any(value < 0 for value in self.eigenvalues):
            raise ValueError("curvature eigenvalues must be non-negative (A is PSD)")
        return self


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ModelKind
    input_dim: int = Field(default=2, ge=1)
    hidden_width: int = Field(default=16, ge=1)
    num_classes: int = Field(default=2, ge=2)
    curvature: CurvatureSpec = CurvatureSpec()
    weight_decay: float = Field(default=0.0, ge=0.0)
    decay_all_params: bool = False

    @model_validator(mode="after")
    def _curvature_matches_dim(self) -> "ModelSpec":
        eigenvalues = self.curvature.eigenvalues
        if self.kind == ModelKind.QUADRATIC and eigenvalues is not None and len(eigenvalues) != self.input_dim:
            raise ValueError(
                f"curvature has {len(eigenvalues)} eigenvalues but input_dim is {self.input_dim}"
            )
        return self


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DatasetKind = DatasetKind.BLOBS
    size: int = Field(default=1536, ge=1)
    seed: int = Field(default=0, ge=0)
    dim: int = Field(default=2, ge=1)
    num_classes: int = Field(default=2, ge=2)
    separation: float = Field(default=2.0, ge=0.0)
    spread: float = Field(default=1.0, gt=0.0)
    label_noise: float = Field(default=0.0, ge=0.0, lt=1.0)
    sigma2: float = Field(default=1.0, ge=0.0)
