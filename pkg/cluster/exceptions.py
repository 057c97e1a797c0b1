from __future__ import annotations

from elastic_engine.runner import RunHalted


class ProtocolError(ValueError):
    """A frame could not be decoded; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class StaleVersion(Exception):
    def __init__(self, worker_id: int, version: int, current: int) -> None:
        super().__init__(f"worker {worker_id} pushed version {version}, server is at {current}")
        self.worker_id = worker_id
        self.version = version
        self.current = current


class ClusterPaused(RunHalted):
    """Every worker is gone; the run waits for joins or a resume."""


class RunStopped(RunHalted):
    """An operator stopped the run."""
