from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError

from model_core.datasets import Dataset, build_dataset
from model_core.exceptions import NonFiniteValues
from model_core.objectives import DeskModel, build_model, full_loss
from model_core.params import ParamVector
from model_core.schemas import DatasetSpec, ModelSpec
from optim.lr_schedule import COSINE_FORM, lr_at
from optim.schemas import LrSchedule, OptimizerConfig
from optim.updater import ParameterUpdater, StepOutcome
from schedules.schemas import Schedule
from schedules.services import materialize_trace, workers_at

from .partition import (
    accumulate_large_batch,
    aggregate_contributions,
    assign_slices,
    base_batches_of,
    local_contribution,
)
from .records import MemorySink, RecordSink, RunEvent, RunHeader, RunRecord, RunSummary, StepRecord, TeeSink
from .schemas import BatchPolicy, BatchPolicyKind, ExecutionMode, RecordsOptions


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainRun:
    model: ModelSpec
    dataset: DatasetSpec
    optimizer: OptimizerConfig
    lr_schedule: LrSchedule
    schedule: Schedule
    batch_policy: BatchPolicy
    epochs: int
    seed: int
    execution: ExecutionMode = ExecutionMode.ACCUMULATE
    records: RecordsOptions = RecordsOptions()
    config_echo: dict[str, Any] = field(default_factory=dict)
    mode: str = "simulate"


@dataclass(frozen=True)
class IterationPlan:
    epoch: int
    step: int
    iter_in_epoch: int
    weights: ParamVector
    indices: np.ndarray
    n_workers: int


@dataclass
class IterationResult:
    grad_sum: ParamVector
    loss_sum: float
    n_workers: int
    outcome: StepOutcome
    restarts: int = 0


ApplyUpdate = Callable[[ParamVector, int], StepOutcome]


class RunHalted(Exception):
    """Raised by a backend when the run cannot continue (stop command, lost cluster)."""


class ExecutionBackend(Protocol):
    def start(self, run: TrainRun, desk: DeskModel, dataset: Dataset, weights: ParamVector) -> None: ...

    def begin_epoch(self, epoch: int, scheduled_workers: int) -> int: ...

    def run_iteration(self, plan: IterationPlan, apply_update: ApplyUpdate) -> IterationResult: ...

    def close(self) -> None: ...


class LocalBackend:
    """In-process gradient evaluation; the scheduled roster is always available."""

    def __init__(self) -> None:
        self.run: TrainRun | None = None

    def start(self, run, desk, dataset, weights) -> None:
        self.run, self.desk, self.dataset = run, desk, dataset

    def begin_epoch(self, epoch: int, scheduled_workers: int) -> int:
        return scheduled_workers

    def run_iteration(self, plan: IterationPlan, apply_update: ApplyUpdate) -> IterationResult:
        if self.run.execution == ExecutionMode.DATA_PARALLEL:
            contributions = [
                local_contribution(self.desk, plan.weights, self.dataset, assignment)
                for assignment in assign_slices(plan.indices, range(plan.n_workers))
            ]
            grad_sum, loss_sum, _ = aggregate_contributions(contributions)
        else:
            grad_sum, loss_sum, _ = accumulate_large_batch(
                self.desk,
                plan.weights,
                self.dataset,
                base_batches_of(plan.indices, self.run.optimizer.base_batch),
            )
        outcome = apply_update(grad_sum, len(plan.indices))
        return IterationResult(grad_sum=grad_sum, loss_sum=loss_sum, n_workers=plan.n_workers, outcome=outcome)

    def close(self) -> None:
        pass


def epoch_order(dataset: Dataset, seed: int, epoch: int) -> np.ndarray:
    """Sample order of one epoch, keyed by (seed, epoch) only."""
    if dataset.is_stream:
        return epoch * dataset.size + np.arange(dataset.size, dtype=np.int64)
    return np.random.default_rng([seed, epoch]).permutation(dataset.size)


class _Sequencer:
    def __init__(self, run: TrainRun, sink: RecordSink, backend: ExecutionBackend) -> None:
        self.run = run
        self.sink = sink
        self.backend = backend
        self.desk = build_model(run.model)
        self.dataset = build_dataset(run.dataset)
        self.threshold = float(getattr(settings, "DIVERGENCE_THRESHOLD", 1e12))
        self.summary = RunSummary()
        self.step = 0
        self.updater: ParameterUpdater | None = None
        self.warmup_iters = 0
        self.workers = 0

    def emit(self, kind: str, epoch: int, **detail) -> None:
        self.sink.event(RunEvent(kind=kind, iter=self.step, epoch=epoch, detail=detail))

    def note_roster(self, epoch: int, n_workers: int) -> None:
        if n_workers != self.workers:
            logger.info("Roster changed epoch=%s old=%s new=%s", epoch, self.workers, n_workers)
            self.emit("roster_change", epoch, old=self.workers, new=n_workers)
            self.workers = n_workers

    def diverged(self, value: float) -> bool:
        return not math.isfinite(value) or abs(value) > self.threshold

    def header(self) -> RunHeader:
        return RunHeader(
            config=self.run.config_echo,
            schedule_trace=materialize_trace(self.run.schedule, self.run.epochs),
            cosine_form=COSINE_FORM,
            strategy=self.run.optimizer.strategy.value,
            num_params=self.desk.num_params,
            mode=self.run.mode,
        )

    def global_batch(self, epoch: int, n_workers: int) -> int:
        batch = self.run.batch_policy.global_batch(n_workers)
        if batch > self.dataset.size:
            logger.warning("Global batch clipped batch=%s epoch_size=%s", batch, self.dataset.size)
            batch = self.dataset.size
        if self.run.batch_policy.kind == BatchPolicyKind.FIXED_TOTAL and n_workers > batch:
            logger.warning("Idle workers epoch=%s workers=%s batch=%s", epoch, n_workers, batch)
            self.emit("idle_workers", epoch, workers=n_workers, batch=batch, idle=n_workers - batch)
        return batch

    def execute(self) -> None:
        run = self.run
        self.sink.open(self.header())
        weights = self.desk.init_params(run.seed)
        self.backend.start(run, self.desk, self.dataset, weights)
        try:
            for epoch in range(run.epochs):
                n_workers = self.backend.begin_epoch(epoch, workers_at(run.schedule, epoch))
                batch = self.global_batch(epoch, n_workers)
                if self.updater is None:
                    self.updater = ParameterUpdater(run.optimizer, weights, initial_batch=batch)
                    self.warmup_iters = run.lr_schedule.warmup_epochs * math.ceil(self.dataset.size / batch)
                    self.workers = workers_at(run.schedule, 0)
                self.note_roster(epoch, n_workers)
                change = self.updater.change_batch(batch, iters_per_epoch=math.ceil(self.dataset.size / batch))
                if change is not None:
                    self.emit("batch_change", epoch, old=change.old_batch, new=change.new_batch, k=change.k, hook=change.hook)
                if not self.run_epoch(epoch, batch, n_workers):
                    return
                self.summary.epochs_completed = epoch + 1
        except RunHalted as exc:
            logger.warning("Run halted step=%s reason=%s", self.step, exc)
            self.summary.stopped = True
            self.emit("stop", self.summary.epochs_completed, reason=str(exc))
        finally:
            self.backend.close()
            self.summary.iterations = self.step
            self.sink.close(self.summary)

    def run_epoch(self, epoch: int, batch: int, n_workers: int) -> bool:
        run = self.run
        order = epoch_order(self.dataset, run.seed, epoch)
        iters_per_epoch = math.ceil(order.size / batch)
        for iter_in_epoch in range(iters_per_epoch):
            indices = order[iter_in_epoch * batch:(iter_in_epoch + 1) * batch]
            short = indices.size < batch
            if short:
                logger.info("Short final batch epoch=%s size=%s batch=%s", epoch, indices.size, batch)
                self.emit("short_batch", epoch, size=int(indices.size), batch=batch)
            weights = self.updater.weights
            schedule_multiplier = lr_at(
                run.lr_schedule, epoch, iter_in_epoch, iters_per_epoch, step=self.step, warmup_iters=self.warmup_iters
            )
            decay = self.desk.decay_term(weights) if run.model.weight_decay > 0 else None
            plan = IterationPlan(
                epoch=epoch,
                step=self.step,
                iter_in_epoch=iter_in_epoch,
                weights=weights,
                indices=indices,
                n_workers=n_workers,
            )

            def apply_update(grad_sum, batch_size):
                return self.updater.apply(
                    grad_sum, batch_size, decay=decay, schedule_multiplier=schedule_multiplier
                )

            try:
                result = self.backend.run_iteration(plan, apply_update)
            except NonFiniteValues as exc:
                return self.diverge(epoch, reason=str(exc))
            n_workers = result.n_workers
            self.note_roster(epoch, n_workers)
            loss_value = result.loss_sum / indices.size + self.desk.decay_penalty(weights)
            grad_mean = result.grad_sum / indices.size
            if decay is not None:
                grad_mean = grad_mean + decay
            grad_norm = float(np.linalg.norm(grad_mean))
            step = StepRecord(
                iter=self.step,
                epoch=epoch,
                n_workers=n_workers,
                B=int(indices.size),
                effective_lr=result.outcome.effective_lr,
                gamma=result.outcome.gamma,
                loss=loss_value,
                grad_norm=grad_norm,
                strategy=run.optimizer.strategy.value,
                full_loss=full_loss(self.desk, weights, self.dataset) if run.records.full_loss else None,
                samples=sorted(int(index) for index in indices) if run.records.samples else None,
                short_batch=True if short else None,
                restarts=result.restarts or None,
            )
            if self.diverged(loss_value) or not math.isfinite(grad_norm):
                return self.diverge(epoch, reason=f"loss={loss_value!r}")
            self.sink.append(step)
            self.step += 1
            self.summary.final_loss = loss_value
            if self.summary.min_grad_norm is None or grad_norm < self.summary.min_grad_norm:
                self.summary.min_grad_norm = grad_norm
        return True

    def diverge(self, epoch: int, *, reason: str) -> bool:
        logger.warning("Run diverged step=%s epoch=%s reason=%s", self.step, epoch, reason)
        self.summary.diverged = True
        self.emit("divergence", epoch, reason=reason)
        return False


def run_training(run: TrainRun, sink: RecordSink | None = None, backend: ExecutionBackend | None = None) -> RunRecord:
    """Execute `run` and return its record; `sink` additionally receives every entry."""
    if run.epochs < 1:
        raise ValidationError(f"A run needs at least one epoch, got {run.epochs}.")
    if run.lr_schedule.total_epochs < run.epochs:
        raise ValidationError(
            f"lr_schedule.total_epochs ({run.lr_schedule.total_epochs}) is shorter than the run ({run.epochs})."
        )
    memory = MemorySink()
    sequencer = _Sequencer(run, TeeSink(memory, sink) if sink is not None else memory, backend or LocalBackend())
    logger.info(
        "Training started strategy=%s epochs=%s seed=%s mode=%s",
        run.optimizer.strategy.value,
        run.epochs,
        run.seed,
        run.mode,
    )
    sequencer.execute()
    record = memory.record
    record.final_weights = sequencer.updater.weights.copy() if sequencer.updater is not None else None
    logger.info(
        "Training finished iterations=%s diverged=%s final_loss=%s",
        record.summary.iterations,
        record.summary.diverged,
        record.summary.final_loss,
    )
    return record
