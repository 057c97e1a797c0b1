from __future__ import annotations

import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from optim.schemas import Strategy


class NoiseEstimate(BaseModel):
    """Trace of the mini-batch gradient covariance at one batch size."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = Field(ge=1)
    variance: float = Field(ge=0.0)
    replicas: int = Field(ge=2)
    ci_low: float
    ci_high: float

    @property
    def reportable(self) -> bool:
        return self.replicas >= 30


class GradSignal(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    g2: float = Field(ge=0.0)


class TheoremConstants(BaseModel):
    """Constants of the convergence bound; derived values are computed on access."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    C: float = Field(gt=0.0)
    L_delta: float = Field(gt=0.0)
    sigma2: float = Field(gt=0.0)
    K: int = Field(ge=1)
    beta: float = Field(default=1.0, ge=0.0)

    @computed_field
    @property
    def T0(self) -> float:
        return 2.0 * self.C * self.K * self.L_delta / self.sigma2

    @computed_field
    @property
    def C1(self) -> float:
        return math.sqrt(2.0 * self.L_delta / (self.C * self.sigma2))

    @computed_field
    @property
    def C2(self) -> float:
        return math.sqrt(2.0 * self.C * self.sigma2 * self.L_delta)


class NoiseOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_sizes: Tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    replicas: int = Field(default=1000, ge=2)

    @model_validator(mode="after")
    def _positive_sizes(self) -> "NoiseOptions":
        if not self.batch_sizes or any(size < 1 for size in self.batch_sizes):
            raise ValueError("batch_sizes must be a non-empty list of positive integers")
        return self


class MomentumOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mus: Tuple[float, ...] = (0.0, 0.5, 0.9, 0.99)
    steps: Optional[int] = Field(default=None, ge=1)
    chains: int = Field(default=512, ge=2)
    rescale_ks: Tuple[float, ...] = (2.0, 4.0, 12.0)
    change_k: float = Field(default=12.0, ge=1.0)
    strategies: Tuple[Strategy, ...] = (
        Strategy.MOMENTUM_SGD,
        Strategy.LINEAR_SCALING,
        Strategy.LINEAR_SCALING_WARMUP,
        Strategy.DYNAMIC_SGD,
        Strategy.DECOUPLED,
    )
    rescale_mu: float = Field(default=0.9, ge=0.0, lt=1.0)
    replicas: int = Field(default=2000, ge=30)

    @model_validator(mode="after")
    def _mus_in_range(self) -> "MomentumOptions":
        if any(not 0.0 <= mu < 1.0 for mu in self.mus):
            raise ValueError("every momentum must lie in [0, 1)")
        return self


class TheoremOptions(BaseModel):
    """Machine trace and Monte-Carlo settings for the convergence-bound check.

    C and L_delta default to the exact values of the quadratic at its initial
    point; sigma2 defaults to the dataset's noise trace.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    iterations: int = Field(default=1000, ge=1)
    max_machines: int = Field(default=16, ge=1)
    trace: Literal["constant", "random"] = "random"
    constant_k: int = Field(default=1, ge=1)
    trace_seed: int = Field(default=0, ge=0)
    betas: Tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)
    seeds: int = Field(default=100, ge=1)
    C: Optional[float] = Field(default=None, gt=0.0)
    L_delta: Optional[float] = Field(default=None, gt=0.0)
    sigma2: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def _trace_fits(self) -> "TheoremOptions":
        if self.trace == "constant" and self.constant_k > self.max_machines:
            raise ValueError("constant_k cannot exceed max_machines")
        if any(beta < 0 for beta in self.betas):
            raise ValueError("betas must be non-negative")
        return self


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    noise: NoiseOptions = NoiseOptions()
    momentum: MomentumOptions = MomentumOptions()
    theorem: TheoremOptions = TheoremOptions()


class CheckResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    passed: bool
    detail: dict = Field(default_factory=dict)
