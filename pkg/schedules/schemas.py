from __future__ import annotations

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator


class _ScheduleBase(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_base: int = Field(default=8, ge=1)


class StaticSchedule(_ScheduleBase):
    kind: Literal["static"] = "static"


class SpikeSchedule(_ScheduleBase):
    """n_base workers until `epoch`, then round(n_base * k) from then on."""

    kind: Literal["spike"] = "spike"
    epoch: int = Field(ge=0)
    k: float = Field(default=12.0, ge=1.0)


class DampSchedule(_ScheduleBase):
    kind: Literal["damp"] = "damp"
    epoch: int = Field(ge=0)
    k: float = Field(default=12.0, ge=1.0)


class RandStepSchedule(_ScheduleBase):
    kind: Literal["rand_step"] = "rand_step"
    period_epochs: int = Field(default=5, ge=1)
    min_scale: int = Field(default=1, ge=1)
    max_scale: int = Field(default=12, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> "RandStepSchedule":
        if self.min_scale > self.max_scale:
            raise ValueError("min_scale cannot exceed max_scale")
        return self


Schedule = Annotated[
    Union[StaticSchedule, SpikeSchedule, DampSchedule, RandStepSchedule],
    Field(discriminator="kind"),
]

schedule_adapter = TypeAdapter(Schedule)
