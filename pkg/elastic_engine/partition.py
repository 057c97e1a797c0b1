from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from django.core.exceptions import ValidationError

from model_core.datasets import Batch, Dataset
from model_core.objectives import ModelLike, gradient_sum, resolve_model
from model_core.params import ParamVector


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkerAssignment:
    worker_id: int
    start: int
    stop: int
    indices: np.ndarray

    @property
    def local_batch(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class Contribution:
    worker_id: int
    grad_sum: ParamVector
    loss_sum: float
    local_batch: int


def partition_batch(B: int, N: int) -> list[int]:
    """First B mod N workers take ceil(B/N) samples, the rest floor(B/N)."""
    if B < 1 or N < 1:
        raise ValidationError(f"partition_batch needs B >= 1 and N >= 1, got B={B}, N={N}.")
    base, extra = divmod(B, N)
    if N > B:
        logger.warning("Idle workers in partition batch=%s workers=%s idle=%s", B, N, N - B)
    return [base + 1 if rank < extra else base for rank in range(N)]


def assign_slices(indices: np.ndarray, worker_ids: Sequence[int]) -> list[WorkerAssignment]:
    """Consecutive slices of `indices`, ranked by ascending worker id."""
    ordered = sorted(worker_ids)
    sizes = partition_batch(len(indices), len(ordered))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [
        WorkerAssignment(worker_id=worker_id, start=int(start), stop=int(stop), indices=indices[start:stop])
        for worker_id, start, stop in zip(ordered, bounds[:-1], bounds[1:])
    ]


def aggregate_contributions(contributions: Iterable[Contribution]) -> tuple[ParamVector, float, int]:
    """Σ grad, Σ loss and Σ batch, reduced in ascending worker id."""
    ordered = sorted(contributions, key=lambda item: item.worker_id)
    if not ordered:
        raise ValidationError("No contributions to aggregate.")
    grad_total = np.zeros_like(ordered[0].grad_sum)
    loss_total = 0.0
    samples = 0
    for item in ordered:
        grad_total = grad_total + item.grad_sum
        loss_total += item.loss_sum
        samples += item.local_batch
    return grad_total, loss_total, samples


def sum_gradients(local_sums: Mapping[int, ParamVector]) -> ParamVector:
    return aggregate_contributions(
        Contribution(worker_id=worker_id, grad_sum=np.asarray(grad, dtype=np.float64), loss_sum=0.0, local_batch=0)
        for worker_id, grad in local_sums.items()
    )[0]


def local_contribution(model: ModelLike, w, dataset: Dataset, assignment: WorkerAssignment) -> Contribution:
    grad_sum, loss_sum = gradient_sum(model, w, dataset, assignment.indices)
    return Contribution(
        worker_id=assignment.worker_id, grad_sum=grad_sum, loss_sum=loss_sum, local_batch=assignment.local_batch
    )


def data_parallel_batch(model: ModelLike, w, dataset: Dataset, batch: Batch, workers: int | Sequence[int]) -> tuple[ParamVector, float]:
    """Unnormalised gradient and loss sums of `batch`, split over `workers`."""
    worker_ids = list(range(workers)) if isinstance(workers, int) else list(workers)
    desk = resolve_model(model)
    contributions = [
        local_contribution(desk, w, dataset, assignment)
        for assignment in assign_slices(batch.indices, worker_ids)
    ]
    grad_total, loss_total, _ = aggregate_contributions(contributions)
    return grad_total, loss_total


def accumulate_large_batch(model: ModelLike, w, dataset: Dataset, base_batches: Sequence[Batch]) -> tuple[ParamVector, float, int]:
    """Gradient of the concatenated batches from per-batch sums accumulated in order.

    Returns (grad_sum, loss_sum, count); grad_sum / count is the mean gradient of
    the large batch, which for equal-size base batches is the mean of their gradients.
    """
    if not base_batches:
        raise ValidationError("accumulate_large_batch needs at least one base batch.")
    seen = np.concatenate([batch.indices for batch in base_batches])
    if np.unique(seen).size != seen.size:
        raise ValidationError("Base batches in one accumulation group must not share samples.")
    desk = resolve_model(model)
    grad_total = None
    loss_total = 0.0
    count = 0
    for batch in base_batches:
        grad_sum, loss_sum = gradient_sum(desk, w, dataset, batch.indices)
        grad_total = grad_sum if grad_total is None else grad_total + grad_sum
        loss_total += loss_sum
        count += batch.count
    return grad_total, loss_total, count


def base_batches_of(indices: np.ndarray, base_batch: int) -> list[Batch]:
    return [Batch.of(indices[start:start + base_batch]) for start in range(0, len(indices), base_batch)]
