from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class BatchPolicyKind(str, Enum):
    FIXED_TOTAL = "fixed_total"
    FIXED_PER_WORKER = "fixed_per_worker"


class ExecutionMode(str, Enum):
    ACCUMULATE = "accumulate"
    DATA_PARALLEL = "data_parallel"


class BatchPolicy(BaseModel):
    """`value` is the global batch for fixed_total and the per-worker batch otherwise."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: BatchPolicyKind = BatchPolicyKind.FIXED_PER_WORKER
    value: int = Field(default=4, ge=1)

    def global_batch(self, n_workers: int) -> int:
        if self.kind == BatchPolicyKind.FIXED_TOTAL:
            return self.value
        return self.value * n_workers


class RecordsOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    full_loss: bool = False
    samples: bool = False
