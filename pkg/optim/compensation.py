from __future__ import annotations

import math
from dataclasses import dataclass

from django.core.exceptions import ValidationError


@dataclass(frozen=True)
class CompensationRamp:
    """Linear ramp of the LR multiplier from `gamma_start` to `gamma_start * k` over T updates.

    `t0` is the index of the first update computed on the changed batch. A ramp
    with k <= 1 is flat: decreases take effect at once.
    """

    t0: int
    k: float
    T: int
    gamma_start: float = 1.0

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise ValidationError(f"Ramp ratio k must be positive, got {self.k}.")
        if self.T < 1:
            raise ValidationError(f"Ramp length T must be at least 1, got {self.T}.")

    @property
    def target(self) -> float:
        return self.gamma_start * self.k

    def finished(self, t: int) -> bool:
        return self.k <= 1.0 or t - self.t0 >= self.T


def default_ramp_length(k: float, t_mult: float = 8.0) -> int:
    return max(1, math.ceil(t_mult * k))


def compensation_factor(ramp: CompensationRamp, t: int) -> float:
    if t < ramp.t0:
        raise ValidationError(f"Iteration {t} precedes the ramp start {ramp.t0}.")
    if ramp.finished(t):
        return ramp.target
    return ramp.gamma_start * (1.0 + ((t - ramp.t0) / ramp.T) * (ramp.k - 1.0))


def start_ramp(
    current: float, settled: float, k: float, t0: int, *, t_mult: float = 8.0, length: int | None = None
) -> CompensationRamp:
    """Ramp for a batch change by ratio `k` arriving at update `t0`.

    `current` is the multiplier in force at t0 (mid-ramp if a previous change is
    still settling) and `settled` the value that previous ramp was heading to.
    The new ramp runs from `current` to `settled * k` over `length` updates, or
    ceil(t_mult * k) when no length is given; a decrease jumps straight there.
    """
    if not k > 0:
        raise ValidationError(f"Batch ratio k must be positive, got {k}.")
    target = settled * k
    if k <= 1.0:
        return CompensationRamp(t0=t0, k=1.0, T=1, gamma_start=target)
    T = default_ramp_length(k, t_mult) if length is None else max(1, length)
    return CompensationRamp(t0=t0, k=target / current, T=T, gamma_start=current)
