from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from django.core.exceptions import ValidationError

from model_core.params import ParamVector, as_param_vector, zeros_like

from .compensation import CompensationRamp, compensation_factor, start_ramp
from .rules import (
    decoupled_momentum_step,
    dynamic_sgd_step,
    linear_scaling_rescale,
    momentum_step_u,
    momentum_step_v,
    sgd_step,
)
from .schemas import MomentumForm, OptimizerConfig, Strategy


logger = logging.getLogger(__name__)

# strategies whose LR multiplier follows the global batch
SCALED_STRATEGIES = {
    Strategy.LINEAR_SCALING,
    Strategy.LINEAR_SCALING_WARMUP,
    Strategy.DYNAMIC_SGD,
    Strategy.DECOUPLED,
}
RAMPED_STRATEGIES = {Strategy.LINEAR_SCALING_WARMUP, Strategy.DYNAMIC_SGD}
RESCALING_STRATEGIES = {Strategy.LINEAR_SCALING}
# v-form buffers rescaled by every change of the multiplier between two updates
CORRECTED_STRATEGIES = {Strategy.LINEAR_SCALING_WARMUP}


@dataclass
class OptimizerState:
    buffer: ParamVector
    form: MomentumForm
    batch: int
    multiplier: float = 1.0
    step: int = 0
    ramp: CompensationRamp | None = None
    applied_multiplier: float | None = None


@dataclass(frozen=True)
class StepOutcome:
    weights: ParamVector
    effective_lr: float
    gamma: float


@dataclass(frozen=True)
class BatchChange:
    old_batch: int
    new_batch: int
    k: float
    hook: str
    ramp: CompensationRamp | None = field(default=None)


def momentum_form_for(config: OptimizerConfig) -> MomentumForm:
    if config.strategy == Strategy.DYNAMIC_SGD:
        return MomentumForm.U
    if config.strategy == Strategy.MOMENTUM_SGD:
        return config.momentum_form
    return MomentumForm.V


class ParameterUpdater:
    """Owns the weights and optimizer state of one run and applies one update per call.

    The caller reports batch changes through `change_batch` before the first
    update that uses the new batch, then calls `apply` with the unnormalised
    gradient sum of that batch.
    """

    def __init__(self, config: OptimizerConfig, w0, *, initial_batch: int | None = None) -> None:
        self.config = config
        self.weights = as_param_vector(w0)
        batch = initial_batch or config.base_batch
        multiplier = batch / config.base_batch if config.strategy in SCALED_STRATEGIES else 1.0
        self.state = OptimizerState(
            buffer=zeros_like(self.weights),
            form=momentum_form_for(config),
            batch=batch,
            multiplier=multiplier,
        )

    @property
    def strategy(self) -> Strategy:
        return self.config.strategy

    def current_multiplier(self) -> float:
        state = self.state
        if state.ramp is None:
            return state.multiplier
        return compensation_factor(state.ramp, state.step)

    def _ramp_length(self, iters_per_epoch: int | None) -> int | None:
        if self.strategy not in CORRECTED_STRATEGIES or iters_per_epoch is None:
            return None
        return math.ceil(self.config.change_warmup_epochs * iters_per_epoch)

    def change_batch(self, new_batch: int, *, iters_per_epoch: int | None = None) -> BatchChange | None:
        """Apply the strategy's hook for a new global batch.

        `iters_per_epoch` at the new batch sets the warm-up length of
        linear_scaling_warmup; without it that strategy ramps over ceil(T_mult * k).
        """
        if new_batch < 1:
            raise ValidationError(f"Global batch must be at least 1, got {new_batch}.")
        state = self.state
        if new_batch == state.batch:
            return None
        k = new_batch / state.batch
        hook = "none"
        ramp = None
        if self.strategy in RESCALING_STRATEGIES:
            state.buffer = linear_scaling_rescale(state.buffer, k)
            hook = "rescale"
        if self.strategy in RAMPED_STRATEGIES:
            settled = state.ramp.target if state.ramp is not None else state.multiplier
            ramp = start_ramp(
                self.current_multiplier(),
                settled,
                k,
                state.step,
                t_mult=self.config.compensation_T_mult,
                length=self._ramp_length(iters_per_epoch),
            )
            state.ramp = ramp
            state.multiplier = ramp.target
            hook = "ramp+correct" if self.strategy in CORRECTED_STRATEGIES else "ramp"
        elif self.strategy in SCALED_STRATEGIES:
            state.multiplier *= k
        change = BatchChange(old_batch=state.batch, new_batch=new_batch, k=k, hook=hook, ramp=ramp)
        state.batch = new_batch
        logger.info(
            "Batch changed strategy=%s old=%s new=%s k=%.6g hook=%s step=%s",
            self.strategy.value,
            change.old_batch,
            new_batch,
            k,
            hook,
            state.step,
        )
        return change

    def apply(
        self,
        grad_sum: ParamVector,
        batch_size: int,
        *,
        decay: ParamVector | None = None,
        schedule_multiplier: float = 1.0,
    ) -> StepOutcome:
        if batch_size < 1:
            raise ValidationError(f"Batch size must be at least 1, got {batch_size}.")
        config = self.config
        state = self.state
        multiplier = self.current_multiplier()
        mu = config.momentum
        w = self.weights
        gamma = multiplier if self.strategy in RAMPED_STRATEGIES else 1.0

        if self.strategy == Strategy.DECOUPLED:
            step_size_hat = config.base_lr * schedule_multiplier / config.base_batch
            sum_grads = grad_sum if decay is None else grad_sum + batch_size * decay
            w, state.buffer = decoupled_momentum_step(state.buffer, w, sum_grads, step_size_hat, mu)
            effective_lr = step_size_hat * batch_size
        else:
            grad_mean = grad_sum / batch_size
            if decay is not None:
                grad_mean = grad_mean + decay
            lr_base = config.base_lr * schedule_multiplier
            effective_lr = lr_base * multiplier
            if self.strategy in CORRECTED_STRATEGIES:
                applied = state.applied_multiplier
                if applied is not None and multiplier != applied:
                    state.buffer = linear_scaling_rescale(state.buffer, multiplier / applied)
                state.applied_multiplier = multiplier
            if self.strategy == Strategy.PLAIN_SGD:
                w = sgd_step(w, grad_mean, effective_lr)
            elif self.strategy == Strategy.DYNAMIC_SGD:
                w, state.buffer = dynamic_sgd_step(state.buffer, w, grad_mean, lr_base, mu, multiplier)
            elif state.form == MomentumForm.U:
                w, state.buffer = momentum_step_u(state.buffer, w, grad_mean, effective_lr, mu)
            else:
                w, state.buffer = momentum_step_v(state.buffer, w, grad_mean, effective_lr, mu)

        self.weights = w
        state.step += 1
        if state.ramp is not None and state.ramp.finished(state.step):
            state.ramp = None
        return StepOutcome(weights=w, effective_lr=float(effective_lr), gamma=float(gamma))
