from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Strategy(str, Enum):
    PLAIN_SGD = "plain_sgd"
    MOMENTUM_SGD = "momentum_sgd"
    LINEAR_SCALING = "linear_scaling"
    LINEAR_SCALING_WARMUP = "linear_scaling_warmup"
    DYNAMIC_SGD = "dynamic_sgd"
    DECOUPLED = "decoupled"


class MomentumForm(str, Enum):
    U = "u"
    V = "v"


class LrScheduleKind(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class OptimizerConfig(BaseModel):
    """Learning rate `base_lr` is defined per `base_batch` samples."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_lr: float = Field(default=0.1, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    base_batch: int = Field(default=32, ge=1)
    strategy: Strategy = Strategy.MOMENTUM_SGD
    momentum_form: MomentumForm = MomentumForm.V
    compensation_T_mult: float = Field(default=8.0, gt=0.0)
    # linear_scaling_warmup only: length of the LR warm-up after a batch increase
    change_warmup_epochs: float = Field(default=5.0, gt=0.0)


class LrSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: LrScheduleKind = LrScheduleKind.COSINE
    total_epochs: int = Field(default=90, ge=1)
    warmup_epochs: int = Field(default=5, ge=0)
    warmup_floor: float = Field(default=0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _warmup_fits(self) -> "LrSchedule":
        if self.warmup_epochs > self.total_epochs:
            raise ValueError("warmup_epochs cannot exceed total_epochs")
        return self
