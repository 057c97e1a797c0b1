from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from django.core.exceptions import ValidationError

from .protocol import Resize


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RosterDecision:
    roster: tuple[int, ...]
    joined: tuple[int, ...] = ()
    left: tuple[int, ...] = ()
    resize: Resize | None = None
    paused: bool = False

    @property
    def changed(self) -> bool:
        return self.resize is not None


@dataclass
class SchedulerState:
    last_heartbeat: dict[int, float] = field(default_factory=dict)
    pending_joins: list[int] = field(default_factory=list)
    pending_leaves: set[int] = field(default_factory=set)
    roster: tuple[int, ...] = ()
    capacity: int | None = None
    paused: bool = False
    clock: float = float("-inf")


class Scheduler:
    """Tracks worker liveness and decides the roster used at each iteration barrier.

    Joins, leaves and evictions are only staged by `tick`; `commit` (called at
    a barrier) makes them the active roster. Worker ids are the smallest free
    non-negative integers, and the roster is kept sorted so ranks follow ids.
    """

    def __init__(self, *, heartbeat_interval: float, miss_limit: int) -> None:
        if heartbeat_interval <= 0 or miss_limit < 1:
            raise ValidationError("Heartbeat interval must be positive and the miss limit at least 1.")
        self.heartbeat_interval = heartbeat_interval
        self.miss_limit = miss_limit
        self.state = SchedulerState()

    @property
    def roster(self) -> tuple[int, ...]:
        return self.state.roster

    @property
    def n_workers(self) -> int:
        return len(self.state.roster)

    def _advance(self, now: float) -> None:
        if now < self.state.clock:
            raise ValidationError(f"Scheduler clock went backwards: {now} < {self.state.clock}.")
        self.state.clock = now

    def _known(self) -> set[int]:
        return set(self.state.last_heartbeat) | set(self.state.pending_joins)

    def admit(self, now: float, requested_id: int = -1) -> int:
        self._advance(now)
        known = self._known()
        if requested_id >= 0 and requested_id not in known:
            worker_id = requested_id
        else:
            worker_id = next(candidate for candidate in range(len(known) + 1) if candidate not in known)
        self.state.last_heartbeat[worker_id] = now
        self.state.pending_joins.append(worker_id)
        self.state.pending_leaves.discard(worker_id)
        logger.info("Worker admitted worker_id=%s now=%s", worker_id, now)
        return worker_id

    def heartbeat(self, worker_id: int, now: float) -> None:
        self._advance(now)
        if worker_id in self.state.last_heartbeat:
            self.state.last_heartbeat[worker_id] = now

    def notice_leave(self, worker_id: int, now: float) -> None:
        self._advance(now)
        if worker_id in self._known():
            self.state.pending_leaves.add(worker_id)
            logger.info("Leave notice worker_id=%s now=%s", worker_id, now)

    def set_capacity(self, capacity: int | None) -> None:
        if capacity is not None and capacity < 0:
            raise ValidationError(f"Capacity must be non-negative, got {capacity}.")
        self.state.capacity = capacity

    def is_live(self, worker_id: int) -> bool:
        return worker_id in self.state.last_heartbeat and worker_id not in self.state.pending_leaves

    def tick(self, now: float) -> RosterDecision:
        """Evict workers silent for more than miss_limit intervals; report the roster the next barrier would use."""
        self._advance(now)
        deadline = self.miss_limit * self.heartbeat_interval
        for worker_id, seen in sorted(self.state.last_heartbeat.items()):
            if now - seen > deadline and worker_id not in self.state.pending_leaves:
                logger.warning("Worker evicted worker_id=%s silent_for=%.3f", worker_id, now - seen)
                self.state.pending_leaves.add(worker_id)
        return self._decide()

    def _decide(self) -> RosterDecision:
        live = sorted(worker_id for worker_id in self.state.last_heartbeat if worker_id not in self.state.pending_leaves)
        if self.state.capacity is not None:
            live = live[:self.state.capacity]
        roster = tuple(live)
        current = set(self.state.roster)
        joined = tuple(worker_id for worker_id in roster if worker_id not in current)
        left = tuple(worker_id for worker_id in self.state.roster if worker_id not in roster)
        resize = Resize(roster=np.array(roster, dtype=np.int32)) if roster != self.state.roster else None
        return RosterDecision(roster=roster, joined=joined, left=left, resize=resize, paused=not roster)

    def commit(self, now: float) -> RosterDecision:
        decision = self.tick(now)
        for worker_id in self.state.pending_leaves:
            self.state.last_heartbeat.pop(worker_id, None)
        self.state.pending_leaves.clear()
        self.state.pending_joins.clear()
        if decision.changed:
            logger.info(
                "Roster committed workers=%s joined=%s left=%s", len(decision.roster), decision.joined, decision.left
            )
        self.state.roster = decision.roster
        if decision.paused and not self.state.paused:
            logger.warning("Cluster paused: no live workers")
        elif not decision.paused and self.state.paused:
            logger.info("Cluster resumed workers=%s", len(decision.roster))
        self.state.paused = decision.paused
        return decision


def scheduler_tick(scheduler: Scheduler, events, now: float) -> RosterDecision:
    """Apply (kind, worker_id) availability events at `now`, then evict and decide."""
    for kind, worker_id in events:
        if kind == "hello":
            scheduler.admit(now, worker_id)
        elif kind == "heartbeat":
            scheduler.heartbeat(worker_id, now)
        elif kind == "leave":
            scheduler.notice_leave(worker_id, now)
        else:
            raise ValidationError(f"Unknown scheduler event '{kind}'.")
    return scheduler.tick(now)
