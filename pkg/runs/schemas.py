from __future__ import annotations

from enum import Enum
from typing import Any, List, Optional

from ninja import Schema
from pydantic import BaseModel, ConfigDict, Field, model_validator

from analysis.schemas import AnalysisConfig
from cluster.schemas import ClusterOptions
from elastic_engine.schemas import BatchPolicy, ExecutionMode, RecordsOptions
from model_core.schemas import DatasetSpec, ModelSpec
from optim.schemas import LrSchedule, OptimizerConfig
from schedules.schemas import Schedule, StaticSchedule


class RunMode(str, Enum):
    SIMULATE = "simulate"
    CLUSTER_INPROC = "cluster_inproc"
    CLUSTER_TCP = "cluster_tcp"


class RunConfig(BaseModel):
    """One training run, fully specified; `seed` is mandatory.

    When `lr_schedule.total_epochs` is not given it is taken from `epochs`.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Optional[str] = Field(default=None, max_length=120)
    model: ModelSpec
    dataset: DatasetSpec = DatasetSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    lr_schedule: LrSchedule = LrSchedule()
    schedule: Schedule = StaticSchedule()
    batch_policy: BatchPolicy = BatchPolicy()
    epochs: int = Field(default=45, ge=1)
    seed: int = Field(ge=0)
    output: Optional[str] = None
    mode: RunMode = RunMode.SIMULATE
    execution: ExecutionMode = ExecutionMode.ACCUMULATE
    records: RecordsOptions = RecordsOptions()
    cluster: ClusterOptions = ClusterOptions()
    analysis: AnalysisConfig = AnalysisConfig()

    @model_validator(mode="before")
    @classmethod
    def _schedule_length(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        epochs = data.get("epochs", cls.model_fields["epochs"].default)
        lr_schedule = data.get("lr_schedule")
        if lr_schedule is None:
            return {**data, "lr_schedule": {"total_epochs": epochs}}
        if isinstance(lr_schedule, dict) and "total_epochs" not in lr_schedule:
            return {**data, "lr_schedule": {**lr_schedule, "total_epochs": epochs}}
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.model.input_dim != self.dataset.dim:
            raise ValueError(f"model.input_dim ({self.model.input_dim}) differs from dataset.dim ({self.dataset.dim})")
        if self.lr_schedule.total_epochs < self.epochs:
            raise ValueError("lr_schedule.total_epochs is shorter than epochs")
        return self


class PresetSchema(Schema):
    name: str
    description: str


class RunRequest(Schema):
    config: dict


class ExperimentRunSchema(Schema):
    id: int
    name: str
    mode: str
    strategy: str
    seed: int
    status: str
    config: dict
    summary: dict
    records_path: str


class CompareRequest(Schema):
    records: List[str]
    window_epochs: int = 2


class ComparisonRowSchema(Schema):
    label: str
    strategy: str
    final_loss: Optional[float] = None
    min_grad_norm: Optional[float] = None
    spike: Optional[float] = None
    final_loss_delta: Optional[float] = None
    spike_delta: Optional[float] = None


class ComparisonSchema(Schema):
    metric: str
    rows: List[ComparisonRowSchema]
