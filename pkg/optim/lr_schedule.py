from __future__ import annotations

import math

from django.core.exceptions import ValidationError

from .schemas import LrSchedule, LrScheduleKind

COSINE_FORM = "raised_half_cosine: 0.5 * (1 + cos(pi * e / E))"


def warmup_multiplier(
    schedule: LrSchedule,
    epoch: int,
    iter_in_epoch: int,
    iters_per_epoch: int,
    *,
    step: int | None = None,
    warmup_iters: int | None = None,
) -> float:
    """Linear per-iteration ramp reaching exactly 1 at the end of warmup.

    Runs whose batch changes pass the global `step` and the `warmup_iters`
    fixed when training started, so the ramp does not jump with the batch.
    """
    if warmup_iters is None:
        warmup_iters = schedule.warmup_epochs * iters_per_epoch
    if warmup_iters == 0:
        return 1.0
    done = (epoch * iters_per_epoch + iter_in_epoch if step is None else step) + 1
    if done >= warmup_iters:
        return 1.0
    return schedule.warmup_floor + (1.0 - schedule.warmup_floor) * (done / warmup_iters)


def cosine_multiplier(schedule: LrSchedule, epoch_fraction: float) -> float:
    if schedule.kind == LrScheduleKind.CONSTANT:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * epoch_fraction / schedule.total_epochs))


def lr_at(
    schedule: LrSchedule,
    epoch: int,
    iter_in_epoch: int,
    iters_per_epoch: int,
    *,
    step: int | None = None,
    warmup_iters: int | None = None,
) -> float:
    if iters_per_epoch < 1:
        raise ValidationError(f"iters_per_epoch must be at least 1, got {iters_per_epoch}.")
    if not 0 <= iter_in_epoch < iters_per_epoch:
        raise ValidationError(f"Iteration {iter_in_epoch} is outside an epoch of {iters_per_epoch}.")
    endpoint = epoch == schedule.total_epochs and iter_in_epoch == 0
    if epoch < 0 or (epoch >= schedule.total_epochs and not endpoint):
        raise ValidationError(f"Epoch {epoch} is outside the schedule of {schedule.total_epochs} epochs.")
    epoch_fraction = epoch + iter_in_epoch / iters_per_epoch
    warmup = warmup_multiplier(
        schedule, epoch, iter_in_epoch, iters_per_epoch, step=step, warmup_iters=warmup_iters
    )
    return warmup * cosine_multiplier(
        schedule, epoch_fraction
    )
