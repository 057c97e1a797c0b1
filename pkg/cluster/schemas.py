from __future__ import annotations

from typing import Literal, Optional

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field


class ClusterEvent(BaseModel):
    """A scripted availability or operator event for the in-process transport.

    `iteration` is the update step at which it fires; `worker` is a roster rank.
    A `drop` silences the worker (no pushes, no heartbeats) once it has received
    that iteration's Assign, so the barrier has to notice it. `delay` holds the
    event back that many logical ticks after the iteration starts.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    iteration: int = Field(ge=0)
    action: Literal["drop", "join", "leave", "pause", "resume", "stop", "resize"]
    worker: Optional[int] = Field(default=None, ge=0)
    value: Optional[int] = Field(default=None, ge=0)
    delay: int = Field(default=0, ge=0)


class ClusterOptions(BaseModel):
    """Unset values fall back to the CLUSTER_* / HEARTBEAT_* Django settings."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    host: Optional[str] = None
    port: Optional[int] = Field(default=None, ge=0, le=65535)
    control_port: Optional[int] = Field(default=None, ge=0, le=65535)
    heartbeat_interval: Optional[float] = Field(default=None, gt=0.0)
    miss_limit: Optional[int] = Field(default=None, ge=1)
    barrier_timeout: Optional[float] = Field(default=None, gt=0.0)
    max_frame_bytes: Optional[int] = Field(default=None, ge=64)
    wait_for_workers: int = Field(default=1, ge=1)
    events: list[ClusterEvent] = Field(default_factory=list)

    def resolved(self) -> "ClusterOptions":
        return self.model_copy(
            update={
                "host": self.host or settings.CLUSTER_HOST,
                "port": settings.CLUSTER_PORT if self.port is None else self.port,
                "control_port": settings.CLUSTER_CONTROL_PORT if self.control_port is None else self.control_port,
                "heartbeat_interval": self.heartbeat_interval or settings.HEARTBEAT_INTERVAL_SECONDS,
                "miss_limit": self.miss_limit or settings.HEARTBEAT_MISS_LIMIT,
                "barrier_timeout": self.barrier_timeout or settings.BARRIER_TIMEOUT_SECONDS,
                "max_frame_bytes": self.max_frame_bytes or settings.MAX_FRAME_BYTES,
            }
        )
