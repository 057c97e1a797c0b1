from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass

import numpy as np

from model_core.datasets import build_dataset
from model_core.objectives import build_model, gradient_sum
from model_core.schemas import DatasetSpec, ModelSpec

from .exceptions import ProtocolError
from .protocol import (
    Assign,
    FrameDecoder,
    Heartbeat,
    Hello,
    Message,
    PullWeights,
    PushGrad,
    Shutdown,
    Weights,
    Welcome,
    encode,
)


logger = logging.getLogger(__name__)


def workload_json(model: ModelSpec, dataset: DatasetSpec) -> str:
    return json.dumps(
        {"model": model.model_dump(mode="json"), "dataset": dataset.model_dump(mode="json")},
        sort_keys=True,
        separators=(",", ":"),
    )


@dataclass
class WorkerCore:
    """Message handling of one worker, independent of the transport carrying it."""

    worker_id: int = -1
    version: int | None = None
    weights: np.ndarray | None = None
    desk: object = None
    dataset: object = None
    stopped: bool = False

    def load_workload(self, workload: str) -> None:
        payload = json.loads(workload)
        self.desk = build_model(ModelSpec.model_validate(payload["model"]))
        self.dataset = build_dataset(DatasetSpec.model_validate(payload["dataset"]))

    def handle(self, message: Message) -> list[Message]:
        if isinstance(message, Welcome):
            self.worker_id = message.worker_id
            if message.workload:
                self.load_workload(message.workload)
            return []
        if isinstance(message, Weights):
            if self.version is None or message.version >= self.version:
                self.version = message.version
                self.weights = np.array(message.payload, dtype=np.float64)
            return []
        if isinstance(message, Assign):
            if self.version != message.version or self.weights is None:
                return [PullWeights(worker_id=self.worker_id)]
            grad, loss_sum = gradient_sum(self.desk, self.weights, self.dataset, message.samples)
            return [
                PushGrad(
                    worker_id=self.worker_id,
                    iteration=message.iteration,
                    version=message.version,
                    local_batch=int(len(message.samples)),
                    loss_sum=loss_sum,
                    grad=grad,
                )
            ]
        if isinstance(message, Shutdown):
            self.stopped = True
        return []


async def run_worker(
    host: str,
    port: int,
    *,
    heartbeat_interval: float = 1.0,
    max_frame_bytes: int | None = None,
    fail_after: int | None = None,
) -> WorkerCore:
    """Connect to a parameter server and serve gradient requests until Shutdown.

    `fail_after` closes the connection abruptly on receiving that many Assigns,
    without answering the last one.
    """
    reader, writer = await asyncio.open_connection(host, port)
    decoder = FrameDecoder(max_frame_bytes) if max_frame_bytes else FrameDecoder()
    core = WorkerCore()
    assigns = 0
    writer.write(encode(Hello(worker_id=-1)))
    await writer.drain()

    async def beat() -> None:
        seq = 0
        while True:
            await asyncio.sleep(heartbeat_interval)
            if core.worker_id >= 0:
                writer.write(encode(Heartbeat(worker_id=core.worker_id, seq=seq)))
                seq += 1

    heartbeats = asyncio.create_task(beat())
    try:
        while not core.stopped:
            data = await reader.read(65536)
            if not data:
                logger.info("Server closed the connection worker_id=%s", core.worker_id)
                break
            for message in decoder.feed(data):
                if isinstance(message, Assign):
                    assigns += 1
                    if fail_after is not None and assigns >= fail_after:
                        logger.warning("Worker dropping connection worker_id=%s", core.worker_id)
                        writer.transport.abort()
                        return core
                for reply in core.handle(message):
                    writer.write(encode(reply))
                await writer.drain()
                if core.stopped:
                    break
    except ProtocolError as exc:
        logger.error("Protocol error, dropping connection worker_id=%s error=%s", core.worker_id, exc)
    finally:
        heartbeats.cancel()
        if not writer.is_closing():
            writer.close()
    return core
