from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from django.core.exceptions import ValidationError

from elastic_engine.partition import Contribution, aggregate_contributions
from model_core.params import ParamVector, as_param_vector
from optim.updater import StepOutcome

from .exceptions import StaleVersion
from .protocol import PushGrad, Weights


logger = logging.getLogger(__name__)

ApplyUpdate = Callable[[ParamVector, int], StepOutcome]


@dataclass
class ParameterServerState:
    weights: ParamVector
    version: int = 0
    iteration: int | None = None
    expected: frozenset[int] = frozenset()
    pending: dict[int, PushGrad] = field(default_factory=dict)


@dataclass(frozen=True)
class RoundResult:
    grad_sum: ParamVector
    loss_sum: float
    batch: int
    outcome: StepOutcome
    broadcast: Weights


class ParameterServer:
    """Primary copy of the weights; mutates them only when the open round is complete."""

    def __init__(self, weights) -> None:
        self.state = ParameterServerState(weights=as_param_vector(weights))

    @property
    def version(self) -> int:
        return self.state.version

    @property
    def weights(self) -> ParamVector:
        return self.state.weights

    def snapshot(self) -> Weights:
        return Weights(version=self.state.version, payload=self.state.weights.copy())

    def open_round(self, iteration: int, contributors: Iterable[int]) -> None:
        self.state.iteration = iteration
        self.state.expected = frozenset(contributors)
        self.state.pending = {}
        if not self.state.expected:
            raise ValidationError("A round needs at least one contributor.")

    def offer(self, push: PushGrad) -> bool:
        """Stage a gradient push; returns True once every expected contributor has pushed."""
        state = self.state
        if push.version != state.version:
            logger.warning(
                "Stale push rejected worker_id=%s version=%s current=%s", push.worker_id, push.version, state.version
            )
            raise StaleVersion(push.worker_id, push.version, state.version)
        if push.iteration != state.iteration or push.worker_id not in state.expected:
            logger.info("Push ignored worker_id=%s iteration=%s open=%s", push.worker_id, push.iteration, state.iteration)
            return self.ready
        state.pending[push.worker_id] = push
        return self.ready

    @property
    def ready(self) -> bool:
        return bool(self.state.expected) and set(self.state.pending) == self.state.expected

    @property
    def missing(self) -> frozenset[int]:
        return self.state.expected - set(self.state.pending)

    def close_round(self, apply_update: ApplyUpdate) -> RoundResult:
        if not self.ready:
            raise ValidationError(f"Round {self.state.iteration} is missing workers {sorted(self.missing)}.")
        return ps_round(self, list(self.state.pending.values()), apply_update)


def ps_round(ps: ParameterServer, contributions: list[PushGrad], apply_update: ApplyUpdate) -> RoundResult:
    """Aggregate in ascending worker id, apply one optimizer step and bump the version."""
    state = ps.state
    ids = [push.worker_id for push in contributions]
    if len(set(ids)) != len(ids) or (state.expected and set(ids) != state.expected):
        raise ValidationError(f"Contributions {sorted(ids)} do not match the expected set {sorted(state.expected)}.")
    for push in contributions:
        if push.version != state.version:
            raise StaleVersion(push.worker_id, push.version, state.version)
    grad_sum, loss_sum, batch = aggregate_contributions(
        Contribution(
            worker_id=push.worker_id,
            grad_sum=np.asarray(push.grad, dtype=np.float64),
            loss_sum=push.loss_sum,
            local_batch=push.local_batch,
        )
        for push in contributions
    )
    outcome = apply_update(grad_sum, batch)
    state.weights = outcome.weights
    state.version += 1
    state.pending = {}
    state.expected = frozenset()
    logger.debug("Round closed version=%s batch=%s", state.version, batch)
    return RoundResult(
        grad_sum=grad_sum,
        loss_sum=loss_sum,
        batch=batch,
        outcome=outcome,
        broadcast=Weights(version=state.version, payload=outcome.weights.copy()),
    )
