"""Run records: one step record per parameter update plus header, events and summary.

On disk a record with stem ``S`` is four files: ``S.jsonl`` (steps),
``S.header.json``, ``S.events.jsonl`` and ``S.summary.json``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol

from django.core.exceptions import ValidationError
from pydantic import BaseModel, ConfigDict, Field


logger = logging.getLogger(__name__)


def canonical_dumps(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


class StepRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    iter: int
    epoch: int
    n_workers: int
    batch: int = Field(alias="B")
    effective_lr: float
    gamma: float
    loss: float
    grad_norm: float
    strategy: str
    full_loss: Optional[float] = None
    samples: Optional[list[int]] = None
    short_batch: Optional[bool] = None
    restarts: Optional[int] = None

    def as_json(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


class RunEvent(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    iter: int
    epoch: int
    detail: dict[str, Any] = Field(default_factory=dict)


class RunHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: dict[str, Any]
    schedule_trace: list[int]
    cosine_form: str
    strategy: str
    num_params: int
    mode: str = "simulate"


class RunSummary(BaseModel):
    model_config = ConfigDict(extra="forbid")

    final_loss: Optional[float] = None
    min_grad_norm: Optional[float] = None
    diverged: bool = False
    iterations: int = 0
    epochs_completed: int = 0
    stopped: bool = False


@dataclass
class RunRecord:
    header: RunHeader
    steps: list[StepRecord] = field(default_factory=list)
    events: list[RunEvent] = field(default_factory=list)
    summary: RunSummary = field(default_factory=RunSummary)
    final_weights: Any = None

    def step_lines(self) -> list[str]:
        return [canonical_dumps(step.as_json()) for step in self.steps]

    def series(self, key: str) -> list:
        return [step.as_json().get(key) for step in self.steps]

    def events_of(self, kind: str) -> list[RunEvent]:
        return [event for event in self.events if event.kind == kind]


class RecordSink(Protocol):
    def open(self, header: RunHeader) -> None: ...

    def append(self, step: StepRecord) -> None: ...

    def event(self, event: RunEvent) -> None: ...

    def close(self, summary: RunSummary) -> None: ...


class MemorySink:
    def __init__(self) -> None:
        self.record: RunRecord | None = None

    def open(self, header: RunHeader) -> None:
        self.record = RunRecord(header=header)

    def append(self, step: StepRecord) -> None:
        self.record.steps.append(step)

    def event(self, event: RunEvent) -> None:
        self.record.events.append(event)

    def close(self, summary: RunSummary) -> None:
        self.record.summary = summary


def record_paths(stem: str | Path) -> dict[str, Path]:
    stem = Path(stem)
    base = stem.with_suffix("") if stem.suffix == ".jsonl" else stem
    return {
        "steps": base.parent / f"{base.name}.jsonl",
        "header": base.parent / f"{base.name}.header.json",
        "events": base.parent / f"{base.name}.events.jsonl",
        "summary": base.parent / f"{base.name}.summary.json",
    }


class JsonlSink:
    """Streams steps and events as JSON lines; header and summary as single objects."""

    def __init__(self, stem: str | Path) -> None:
        self.paths = record_paths(stem)
        self._steps = None
        self._events = None

    def open(self, header: RunHeader) -> None:
        self.paths["steps"].parent.mkdir(parents=True, exist_ok=True)
        self.paths["header"].write_text(canonical_dumps(header.model_dump(mode="json")) + "\n", encoding="utf-8")
        self._steps = self.paths["steps"].open("w", encoding="utf-8")
        self._events = self.paths["events"].open("w", encoding="utf-8")

    def append(self, step: StepRecord) -> None:
        self._steps.write(canonical_dumps(step.as_json()) + "\n")

    def event(self, event: RunEvent) -> None:
        self._events.write(canonical_dumps(event.model_dump(mode="json")) + "\n")

    def close(self, summary: RunSummary) -> None:
        for handle in (self._steps, self._events):
            if handle is not None:
                handle.close()
        self.paths["summary"].write_text(canonical_dumps(summary.model_dump(mode="json")) + "\n", encoding="utf-8")
        logger.info("Run record written steps=%s", self.paths["steps"])


class TeeSink:
    def __init__(self, *sinks: RecordSink) -> None:
        self.sinks = sinks

    def open(self, header):
        for sink in self.sinks:
            sink.open(header)

    def append(self, step):
        for sink in self.sinks:
            sink.append(step)

    def event(self, event):
        for sink in self.sinks:
            sink.event(event)

    def close(self, summary):
        for sink in self.sinks:
            sink.close(summary)


def _read_lines(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_run_record(stem: str | Path) -> RunRecord:
    paths = record_paths(stem)
    if not paths["header"].exists() or not paths["steps"].exists():
        raise ValidationError(f"No run record at {paths['steps']}.")
    header = RunHeader.model_validate_json(paths["header"].read_text(encoding="utf-8"))
    summary = (
        RunSummary.model_validate_json(paths["summary"].read_text(encoding="utf-8"))
        if paths["summary"].exists()
        else RunSummary()
    )
    return RunRecord(
        header=header,
        steps=[StepRecord.model_validate(line) for line in _read_lines(paths["steps"])],
        events=[RunEvent.model_validate(line) for line in _read_lines(paths["events"])],
        summary=summary,
    )
