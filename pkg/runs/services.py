from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import DatabaseError

from analysis.reports import write_csv_table, write_json_report
from cluster.coordinator import ClusterBackend
from cluster.transport import InProcessTransport, TcpTransport
from elastic_engine.records import JsonlSink, RunRecord, load_run_record
from elastic_engine.runner import ExecutionBackend, TrainRun, run_training

from .config import config_echo
from .models import ExperimentRun, RunStatus
from .schemas import ComparisonRowSchema, ComparisonSchema, RunConfig, RunMode


logger = logging.getLogger(__name__)


def build_train_run(config: RunConfig) -> TrainRun:
    return TrainRun(
        model=config.model,
        dataset=config.dataset,
        optimizer=config.optimizer,
        lr_schedule=config.lr_schedule,
        schedule=config.schedule,
        batch_policy=config.batch_policy,
        epochs=config.epochs,
        seed=config.seed,
        execution=config.execution,
        records=config.records,
        config_echo=config_echo(config),
        mode=config.mode.value,
    )


def build_backend(config: RunConfig) -> ExecutionBackend | None:
    """None selects the simulator's local backend."""
    if config.mode == RunMode.SIMULATE:
        return None
    options = config.cluster.resolved()
    if config.mode == RunMode.CLUSTER_INPROC:
        transport = InProcessTransport(options.events, max_frame_bytes=options.max_frame_bytes)
    else:
        transport = TcpTransport(
            options.host, options.port, options.control_port, max_frame_bytes=options.max_frame_bytes
        )
    return ClusterBackend(transport, options)


def default_stem(config: RunConfig) -> Path:
    name = config.name or "run"
    return Path(settings.RUN_OUTPUT_DIR) / f"{name}-{config.optimizer.strategy.value}-s{config.seed}"


def status_of(record: RunRecord) -> str:
    if record.summary.diverged:
        return RunStatus.DIVERGED
    if record.summary.stopped:
        return RunStatus.STOPPED
    return RunStatus.FINISHED


@dataclass
class RunOutcome:
    record: RunRecord
    stem: Path
    experiment: ExperimentRun | None = None

    @property
    def diverged(self) -> bool:
        return self.record.summary.diverged


class RunService:
    """Executes a run config, writes its record files and keeps the experiment ledger."""

    def __init__(self, *, persist: bool = True) -> None:
        self.persist = persist

    def _open_ledger(self, config: RunConfig, stem: Path) -> ExperimentRun | None:
        if not self.persist:
            return None
        try:
            return ExperimentRun.objects.create(
                name=config.name or "",
                mode=config.mode.value,
                strategy=config.optimizer.strategy.value,
                seed=config.seed,
                config=config_echo(config),
                records_path=str(stem),
            )
        except DatabaseError as exc:
            logger.warning("Experiment ledger unavailable, run not stored error=%s", exc)
            return None

    @staticmethod
    def _close_ledger(experiment: ExperimentRun | None, status: str, summary: dict) -> None:
        if experiment is None:
            return
        experiment.status = status
        experiment.summary = summary
        experiment.save(update_fields=["status", "summary", "updated_at"])

    def execute(self, config: RunConfig, *, stem: str | Path | None = None) -> RunOutcome:
        stem = Path(stem or config.output or default_stem(config))
        experiment = self._open_ledger(config, stem)
        try:
            record = run_training(build_train_run(config), JsonlSink(stem), build_backend(config))
        except Exception as exc:
            self._close_ledger(experiment, RunStatus.FAILED, {"error": str(exc)})
            raise
        self._close_ledger(experiment, status_of(record), record.summary.model_dump(mode="json"))
        logger.info("Run stored stem=%s status=%s", stem, status_of(record))
        return RunOutcome(record=record, stem=stem, experiment=experiment)


def loss_series(record: RunRecord) -> tuple[str, np.ndarray]:
    """Full-dataset loss when every step recorded it, the mini-batch loss otherwise."""
    values = record.series("full_loss")
    if values and all(value is not None for value in values):
        return "full_loss", np.array(values, dtype=np.float64)
    return "loss", np.array(record.series("loss"), dtype=np.float64)


def spike_magnitude(record: RunRecord, *, window_epochs: int = 2) -> float | None:
    """Largest ratio of the loss in a change window to the median loss of the epoch before it."""
    _, values = loss_series(record)
    epochs = np.array(record.series("epoch"), dtype=np.int64)
    trace = record.header.schedule_trace
    worst = None
    for change in range(1, len(trace)):
        if trace[change] == trace[change - 1]:
            continue
        trailing = values[epochs == change - 1]
        window = values[(epochs >= change) & (epochs < change + window_epochs)]
        if trailing.size == 0 or window.size == 0:
            continue
        ratio = float(window.max() / np.median(trailing))
        worst = ratio if worst is None else max(worst, ratio)
    return worst


_SHARED_KEYS = ("model", "dataset", "seed")


def compare(records: Iterable[RunRecord], *, labels: Iterable[str] | None = None, window_epochs: int = 2) -> ComparisonSchema:
    records = list(records)
    if not records:
        raise ValidationError("Nothing to compare: no run records given.")
    if window_epochs < 1:
        raise ValidationError(f"window_epochs must be at least 1, got {window_epochs}.")
    reference = records[0].header.config
    for index, record in enumerate(records[1:], start=1):
        for key in _SHARED_KEYS:
            if record.header.config.get(key) != reference.get(key):
                raise ValidationError(f"Record {index} differs from record 0 in '{key}'; runs are not comparable.")
    labels = list(labels) if labels is not None else [
        record.header.config.get("name") or record.header.strategy for record in records
    ]
    metric = "full_loss" if all(loss_series(record)[0] == "full_loss" for record in records) else "loss"
    rows = []
    for label, record in zip(labels, records):
        rows.append(
            ComparisonRowSchema(
                label=label,
                strategy=record.header.strategy,
                final_loss=record.summary.final_loss,
                min_grad_norm=record.summary.min_grad_norm,
                spike=spike_magnitude(record, window_epochs=window_epochs),
            )
        )
    first = rows[0]
    for row in rows:
        if row.final_loss is not None and first.final_loss is not None:
            row.final_loss_delta = row.final_loss - first.final_loss
        if row.spike is not None and first.spike is not None:
            row.spike_delta = row.spike - first.spike
    logger.info("Runs compared count=%s metric=%s", len(rows), metric)
    return ComparisonSchema(metric=metric, rows=rows)


def compare_paths(paths: Iterable[str | Path], *, window_epochs: int = 2) -> ComparisonSchema:
    paths = list(paths)
    records = [load_run_record(path) for path in paths]
    labels = [Path(path).name.removesuffix(".jsonl") for path in paths]
    return compare(records, labels=labels, window_epochs=window_epochs)


def write_comparison(comparison: ComparisonSchema, stem: str | Path) -> list[Path]:
    stem = Path(stem)
    header = ["label", "strategy", "final_loss", "min_grad_norm", "spike", "final_loss_delta", "spike_delta"]
    rows = [[getattr(row, column) for column in header] for row in comparison.rows]
    return [
        write_json_report(stem.parent / f"{stem.name}.json", comparison.model_dump(mode="json")),
        write_csv_table(stem.parent / f"{stem.name}.csv", header, rows),
    ]
