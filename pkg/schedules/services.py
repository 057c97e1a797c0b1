"""Worker-count schedules.

rand_step draws one integer scale per period from a SplitMix64 generator seeded
with the schedule seed: period p uses the p-th output (p = 0, 1, ...) and the
scale is ``min_scale + out % (max_scale - min_scale + 1)``.
"""

from __future__ import annotations

import logging

from django.core.exceptions import ValidationError

from model_core.prng import GOLDEN_GAMMA, MASK64, splitmix64

from .schemas import DampSchedule, RandStepSchedule, Schedule, SpikeSchedule, StaticSchedule


logger = logging.getLogger(__name__)


def _rand_scale(schedule: RandStepSchedule, period: int) -> int:
    # the p-th output of a SplitMix64 sequence is reachable without replaying it
    state = (schedule.seed + period * GOLDEN_GAMMA) & MASK64
    _, out = splitmix64(state)
    return schedule.min_scale + out % (schedule.max_scale - schedule.min_scale + 1)


def scale_at(schedule: Schedule, epoch: int) -> float:
    if isinstance(schedule, SpikeSchedule):
        return schedule.k if epoch >= schedule.epoch else 1.0
    if isinstance(schedule, DampSchedule):
        return 1.0 / schedule.k if epoch >= schedule.epoch else 1.0
    if isinstance(schedule, RandStepSchedule):
        period = epoch // schedule.period_epochs
        return float(_rand_scale(schedule, period))
    return 1.0


def workers_at(schedule: Schedule, epoch: int) -> int:
    if epoch < 0:
        raise ValidationError(f"Epoch must be non-negative, got {epoch}.")
    if isinstance(schedule, SpikeSchedule) and epoch >= schedule.epoch:
        return max(1, round(schedule.n_base * schedule.k))
    if isinstance(schedule, DampSchedule) and epoch >= schedule.epoch:
        return max(1, round(schedule.n_base / schedule.k))
    if isinstance(schedule, RandStepSchedule):
        return schedule.n_base * int(scale_at(schedule, epoch))
    return schedule.n_base


def sample_random_schedules(template: RandStepSchedule | StaticSchedule, count: int) -> list[Schedule]:
    """`count` replayable schedules with distinct seeds derived from the template's seed."""
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}.")
    if isinstance(template, StaticSchedule):
        return [template] * count
    if template.min_scale == template.max_scale:
        static = StaticSchedule(n_base=template.n_base * template.min_scale)
        return [static] * count
    seeds = []
    state = template.seed & MASK64
    while len(seeds) < count:
        state, out = splitmix64(state)
        seed = out >> 1
        if seed not in seeds:
            seeds.append(seed)
    logger.debug("Random schedules sampled count=%s template_seed=%s", count, template.seed)
    return [template.model_copy(update={"seed": seed}) for seed in seeds]


def materialize_trace(schedule: Schedule, epochs: int) -> list[int]:
    """Worker count per epoch, for the run header."""
    return [workers_at(schedule, epoch) for epoch in range(epochs)]


def change_epochs(schedule: Schedule, epochs: int) -> list[int]:
    trace = materialize_trace(schedule, epochs)
    return [epoch for epoch in range(1, epochs) if trace[epoch] != trace[epoch - 1]]
