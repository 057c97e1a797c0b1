from __future__ import annotations

import logging
import math

from elastic_engine.partition import assign_slices
from elastic_engine.runner import IterationPlan, IterationResult

from .control import ControlCommand
from .exceptions import ClusterPaused, RunStopped, StaleVersion
from .parameter_server import ParameterServer
from .protocol import Assign, Hello, Heartbeat, PullWeights, PushGrad, Shutdown, Welcome
from .scheduler import RosterDecision, Scheduler
from .schemas import ClusterOptions
from .transport import Inbound, Transport
from .worker import workload_json


logger = logging.getLogger(__name__)

# logical ticks an in-process run waits for a roster to settle
_SETTLE_TICKS = 8


class ClusterBackend:
    """Drives one run through a scheduler, a parameter server and remote workers.

    Plugs into `run_training` as its execution backend: every iteration is an
    Assign / PushGrad barrier closed by `ps_round`, restarted under the new
    roster whenever an expected worker disappears.
    """

    def __init__(self, transport: Transport, options: ClusterOptions | None = None) -> None:
        self.transport = transport
        self.options = (options or ClusterOptions()).resolved()
        self.scheduler: Scheduler | None = None
        self.ps: ParameterServer | None = None
        self.worker_conn: dict[int, int] = {}
        self.conn_worker: dict[int, int] = {}
        self.outstanding: dict[int, int] = {}
        self.assignments: dict[int, Assign] = {}
        self.operator_paused = False
        self.epoch = 0
        self.workload = ""

    @property
    def _interval(self) -> float:
        return 1.0 if self.transport.logical_clock else self.options.heartbeat_interval

    @property
    def _poll_timeout(self) -> float:
        return 0.0 if self.transport.logical_clock else min(0.05, self._interval)

    @property
    def _rejoin_timeout(self) -> float:
        if self.transport.logical_clock:
            return math.ceil(self.options.barrier_timeout / self.options.heartbeat_interval)
        return self.options.barrier_timeout

    @property
    def _barrier_timeout(self) -> float:
        if self.transport.logical_clock:
            return (self.options.miss_limit + 2) * self._interval
        return self.options.barrier_timeout

    def start(self, run, desk, dataset, weights) -> None:
        self.scheduler = Scheduler(heartbeat_interval=self._interval, miss_limit=self.options.miss_limit)
        self.ps = ParameterServer(weights)
        self.workload = workload_json(run.model, run.dataset)
        self.transport.start()

    def _send(self, worker_id: int, message) -> None:
        conn = self.worker_conn.get(worker_id)
        if conn is not None:
            self.transport.send(conn, message)

    def _assign(self, worker_id: int) -> None:
        assign = self.assignments.get(worker_id)
        if assign is not None:
            self.outstanding[worker_id] = self.outstanding.get(worker_id, 0) + 1
            self._send(worker_id, assign)

    def _handle(self, item: Inbound) -> None:
        now = self.transport.now()
        if item.kind == "control":
            self._control(item.command)
            return
        if item.kind == "disconnect":
            worker_id = self.conn_worker.pop(item.conn, None)
            if worker_id is not None:
                self.worker_conn.pop(worker_id, None)
                self.scheduler.notice_leave(worker_id, now)
            return
        message = item.message
        if isinstance(message, Hello):
            worker_id = self.scheduler.admit(now, message.worker_id)
            self.worker_conn[worker_id] = item.conn
            self.outstanding[worker_id] = 0
            self.conn_worker[item.conn] = worker_id
            self.transport.send(item.conn, Welcome(worker_id=worker_id, workload=self.workload))
            self.transport.send(item.conn, self.ps.snapshot())
        elif isinstance(message, Heartbeat):
            self.scheduler.heartbeat(message.worker_id, now)
        elif isinstance(message, PullWeights):
            self._answered(message.worker_id)
            self._send(message.worker_id, self.ps.snapshot())
            self._assign(message.worker_id)
        elif isinstance(message, PushGrad):
            if not self._answered(message.worker_id):
                return
            try:
                self.ps.offer(message)
            except StaleVersion:
                self._send(message.worker_id, self.ps.snapshot())
                self._assign(message.worker_id)

    def _answered(self, worker_id: int) -> bool:
        """Count one reply; only the answer to the latest Assign is used."""
        left = self.outstanding.get(worker_id, 0) - 1
        self.outstanding[worker_id] = max(left, 0)
        return left == 0

    def _control(self, command: ControlCommand) -> None:
        logger.info("Admin command applied command=%s", command)
        if command.action == "stop":
            raise RunStopped("stopped by operator")
        if command.action == "pause":
            self.operator_paused = True
        elif command.action == "resume":
            self.operator_paused = False
        elif command.action == "resize":
            self.scheduler.set_capacity(command.value)
            self.transport.align(command.value)

    def _pump(self) -> None:
        for item in self.transport.poll(self._poll_timeout):
            self._handle(item)

    def _wait_while_paused(self) -> None:
        ticks = 0
        while self.operator_paused:
            self._pump()
            ticks += 1
            if self.transport.logical_clock and ticks > self._rejoin_timeout:
                raise ClusterPaused("paused by operator with no resume pending")

    def _await_rejoin(self) -> RosterDecision:
        """Hold the barrier on an empty roster until a Hello brings a worker back.

        The iteration is not advanced while waiting; only the barrier timeout
        ends the wait, and then the run halts.
        """
        started = self.transport.now()
        deadline = started + self._rejoin_timeout
        while True:
            self._pump()
            now = self.transport.now()
            if self.scheduler.tick(now).roster:
                decision = self.scheduler.commit(now)
                logger.info("Roster repopulated workers=%s waited=%s", len(decision.roster), now - started)
                return decision
            if now >= deadline:
                raise ClusterPaused(f"no worker rejoined within {self._rejoin_timeout}")

    def _settle(self, target: int | None, *, exact: bool = False) -> tuple[int, ...]:
        deadline = self.transport.now() + (_SETTLE_TICKS if self.transport.logical_clock else self._barrier_timeout)
        while True:
            self._wait_while_paused()
            decision = self.scheduler.tick(self.transport.now())
            wanted = target if target is not None else 1
            settled = len(decision.roster) == wanted if exact else len(decision.roster) >= wanted
            if settled or self.transport.now() >= deadline:
                break
            self._pump()
        decision = self.scheduler.commit(self.transport.now())
        if decision.paused:
            decision = self._await_rejoin()
        if decision.resize is not None:
            for worker_id in decision.roster:
                self._send(worker_id, decision.resize)
        return decision.roster

    def begin_epoch(self, epoch: int, scheduled_workers: int) -> int:
        self.epoch = epoch
        if self.transport.logical_clock:
            self.transport.align(scheduled_workers)
            roster = self._settle(scheduled_workers, exact=True)
        else:
            roster = self._settle(self.options.wait_for_workers if epoch == 0 else None)
        return len(roster)

    def _await_round(self, roster: tuple[int, ...]) -> bool:
        deadline = self.transport.now() + self._barrier_timeout
        while not self.ps.ready:
            self._pump()
            if self.ps.ready:
                break
            self.scheduler.tick(self.transport.now())
            lost = [worker_id for worker_id in roster if not self.scheduler.is_live(worker_id)]
            if lost:
                logger.warning("Barrier lost workers iteration=%s lost=%s", self.ps.state.iteration, lost)
                return False
            if self.transport.now() >= deadline:
                missing = sorted(self.ps.missing)
                logger.warning("Barrier timeout iteration=%s missing=%s", self.ps.state.iteration, missing)
                for worker_id in missing:
                    self.scheduler.notice_leave(worker_id, self.transport.now())
                return False
        return True

    def run_iteration(self, plan: IterationPlan, apply_update) -> IterationResult:
        self.transport.on_iteration(plan.step, self.scheduler.roster)
        restarts = 0
        while True:
            self._pump()
            self._wait_while_paused()
            roster = self._settle(None)
            self.ps.open_round(plan.step, roster)
            self.assignments = {
                slot.worker_id: Assign(
                    worker_id=slot.worker_id,
                    epoch=plan.epoch,
                    iteration=plan.step,
                    version=self.ps.version,
                    samples=slot.indices,
                )
                for slot in assign_slices(plan.indices, roster)
            }
            for worker_id in roster:
                self._assign(worker_id)
            if self._await_round(roster):
                break
            restarts += 1
            logger.warning("Barrier restart iteration=%s restarts=%s", plan.step, restarts)
        result = self.ps.close_round(apply_update)
        self.assignments = {}
        for worker_id in sorted(self.worker_conn):
            self._send(worker_id, result.broadcast)
        return IterationResult(
            grad_sum=result.grad_sum,
            loss_sum=result.loss_sum,
            n_workers=len(roster),
            outcome=result.outcome,
            restarts=restarts,
        )

    def close(self) -> None:
        for worker_id in sorted(self.worker_conn):
            self._send(worker_id, Shutdown())
        if not self.transport.logical_clock:
            self.transport.poll(0.2)
        self.transport.close()
        logger.info("Cluster closed workers=%s", len(self.worker_conn))
