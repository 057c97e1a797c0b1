from __future__ import annotations

import asyncio
import itertools
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from django.core.exceptions import ImproperlyConfigured, ValidationError

from .control import ControlCommand, parse_command
from .exceptions import ProtocolError
from .protocol import DEFAULT_MAX_FRAME_BYTES, Assign, FrameDecoder, Heartbeat, Hello, Message, encode
from .schemas import ClusterEvent
from .worker import WorkerCore


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Inbound:
    """Something the coordinator has to react to: a decoded message, a lost connection or a command."""

    kind: str
    conn: int | None = None
    message: Message | None = None
    command: ControlCommand | None = None


class Transport(Protocol):
    logical_clock: bool

    def start(self) -> None: ...

    def now(self) -> float: ...

    def poll(self, timeout: float) -> list[Inbound]: ...

    def send(self, conn: int, message: Message) -> None: ...

    def align(self, n_workers: int) -> None: ...

    def on_iteration(self, iteration: int, ranks: Iterable[int]) -> None: ...

    def close(self) -> None: ...


@dataclass
class SimulatedWorker:
    conn: int
    core: WorkerCore
    decoder: FrameDecoder
    inbox: list[bytes] = field(default_factory=list)
    alive: bool = True
    silent: bool = False
    drop_at: int | None = None
    heartbeat_seq: int = 0

    @property
    def serving(self) -> bool:
        return self.alive and not self.silent


class InProcessTransport:
    """Single-threaded, deterministic transport driven by logical ticks.

    Every message is encoded to bytes and decoded on the other side. One `poll`
    is one tick: workers are visited in ascending connection id, each handles
    its inbox, answers, and sends a heartbeat.
    """

    logical_clock = True

    def __init__(self, events: Iterable[ClusterEvent] = (), *, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> None:
        self.max_frame_bytes = max_frame_bytes
        self.tick = 0.0
        self.workers: dict[int, SimulatedWorker] = {}
        self.events = sorted(events, key=lambda event: event.iteration)
        self._fired = 0
        self._delayed: list[tuple[float, int, list[int], ClusterEvent]] = []
        self._conn_ids = itertools.count()
        self._to_server: list[tuple[int, bytes]] = []
        self._notices: list[Inbound] = []
        self._server_decoders: dict[int, FrameDecoder] = {}

    def start(self) -> None:
        pass

    def now(self) -> float:
        return self.tick

    def serving(self) -> list[SimulatedWorker]:
        return [worker for worker in self.workers.values() if worker.serving]

    def spawn(self) -> int:
        conn = next(self._conn_ids)
        self.workers[conn] = SimulatedWorker(conn=conn, core=WorkerCore(), decoder=FrameDecoder(self.max_frame_bytes))
        self._server_decoders[conn] = FrameDecoder(self.max_frame_bytes)
        self._to_server.append((conn, encode(Hello(worker_id=-1))))
        return conn

    def retire(self, conn: int) -> None:
        worker = self.workers.get(conn)
        if worker is not None and worker.alive:
            worker.alive = False
            self._notices.append(Inbound(kind="disconnect", conn=conn))

    def align(self, n_workers: int) -> None:
        serving = sorted(worker.conn for worker in self.serving())
        for _ in range(n_workers - len(serving)):
            self.spawn()
        for conn in reversed(serving[n_workers:]):
            self.retire(conn)

    def _by_rank(self, ranks: list[int], rank: int | None) -> SimulatedWorker | None:
        if rank is None or rank >= len(ranks):
            return None
        worker_id = ranks[rank]
        return next((w for w in self.serving() if w.core.worker_id == worker_id), None)

    def on_iteration(self, iteration: int, ranks: Iterable[int]) -> None:
        ranks = sorted(ranks)
        while self._fired < len(self.events) and self.events[self._fired].iteration <= iteration:
            event = self.events[self._fired]
            self._fired += 1
            if event.delay:
                self._delayed.append((self.tick + event.delay, iteration, ranks, event))
            else:
                self._fire(event, iteration, ranks)

    def _fire(self, event: ClusterEvent, iteration: int, ranks: list[int]) -> None:
        logger.info("Scripted cluster event iteration=%s action=%s worker=%s", iteration, event.action, event.worker)
        if event.action == "join":
            for _ in range(event.value or 1):
                self.spawn()
        elif event.action in ("drop", "leave"):
            worker = self._by_rank(ranks, event.worker)
            if worker is None:
                return
            if event.action == "drop":
                worker.drop_at = iteration
            else:
                self.retire(worker.conn)
        else:
            command = ControlCommand(action=event.action, value=event.value)
            self._notices.append(Inbound(kind="control", command=command))

    def send(self, conn: int, message: Message) -> None:
        worker = self.workers.get(conn)
        if worker is not None and worker.serving:
            worker.inbox.append(encode(message))

    def poll(self, timeout: float = 0.0) -> list[Inbound]:
        self.tick += 1.0
        due = [entry for entry in self._delayed if entry[0] <= self.tick]
        self._delayed = [entry for entry in self._delayed if entry[0] > self.tick]
        for _, iteration, ranks, event in due:
            self._fire(event, iteration, ranks)
        for conn in sorted(self.workers):
            worker = self.workers[conn]
            if not worker.serving:
                worker.inbox.clear()
                continue
            frames, worker.inbox = worker.inbox, []
            for frame in frames:
                for message in worker.decoder.feed(frame):
                    if worker.silent:
                        break
                    if isinstance(message, Assign) and worker.drop_at == message.iteration:
                        logger.info("Simulated worker went silent worker_id=%s", worker.core.worker_id)
                        worker.silent = True
                        break
                    for reply in worker.core.handle(message):
                        self._to_server.append((conn, encode(reply)))
            if worker.serving and worker.core.worker_id >= 0:
                beat = Heartbeat(worker_id=worker.core.worker_id, seq=worker.heartbeat_seq)
                worker.heartbeat_seq += 1
                self._to_server.append((conn, encode(beat)))
        inbound, self._notices = self._notices, []
        outgoing, self._to_server = self._to_server, []
        for conn, frame in outgoing:
            for message in self._server_decoders[conn].feed(frame):
                inbound.append(Inbound(kind="message", conn=conn, message=message))
        return inbound

    def close(self) -> None:
        for worker in self.workers.values():
            worker.alive = False


class TcpTransport:
    """Length-prefixed frames over TCP plus a line-oriented control socket.

    The asyncio servers run on a background thread; everything they receive is
    queued for the coordinator, which stays a single sequential consumer.
    """

    logical_clock = False

    def __init__(self, host: str, port: int, control_port: int, *, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> None:
        self.host = host
        self.port = port
        self.control_port = control_port
        self.max_frame_bytes = max_frame_bytes
        self.address: tuple[str, int] | None = None
        self.control_address: tuple[str, int] | None = None
        self._inbox: queue.Queue[Inbound] = queue.Queue()
        self._writers: dict[int, asyncio.StreamWriter] = {}
        self._conn_ids = itertools.count()
        self._ready = threading.Event()
        self._error: BaseException | None = None
        self._loop: asyncio.AbstractEventLoop | None = None
        self._stop: asyncio.Event | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._serve, name="cluster-tcp", daemon=True)
        self._thread.start()
        self._ready.wait(timeout=10)
        if self._error is not None or self.address is None:
            raise ImproperlyConfigured(f"Cluster transport failed to listen on {self.host}:{self.port}: {self._error}")
        logger.info("Cluster listening address=%s control=%s", self.address, self.control_address)

    def _serve(self) -> None:
        try:
            asyncio.run(self._main())
        except BaseException as exc:  # noqa: BLE001
            self._error = exc
            self._ready.set()

    async def _main(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._stop = asyncio.Event()
        server = await asyncio.start_server(self._handle_worker, self.host, self.port)
        control = await asyncio.start_server(self._handle_control, self.host, self.control_port)
        self.address = server.sockets[0].getsockname()[:2]
        self.control_address = control.sockets[0].getsockname()[:2]
        self._ready.set()
        async with server, control:
            await self._stop.wait()
        for writer in list(self._writers.values()):
            writer.close()

    async def _handle_worker(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = next(self._conn_ids)
        self._writers[conn] = writer
        decoder = FrameDecoder(self.max_frame_bytes)
        try:
            while data := await reader.read(65536):
                for message in decoder.feed(data):
                    self._inbox.put(Inbound(kind="message", conn=conn, message=message))
        except ProtocolError as exc:
            logger.warning("Protocol error, connection dropped conn=%s error=%s", conn, exc)
        except ConnectionError as exc:
            logger.info("Connection lost conn=%s error=%s", conn, exc)
        finally:
            self._writers.pop(conn, None)
            writer.close()
            self._inbox.put(Inbound(kind="disconnect", conn=conn))

    async def _handle_control(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        async for raw in reader:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            try:
                command = parse_command(line)
            except ValidationError as exc:
                writer.write(f"error {' '.join(exc.messages)}\n".encode())
            else:
                logger.info("Admin command received command=%s", command)
                self._inbox.put(Inbound(kind="control", command=command))
                writer.write(b"ok\n")
            await writer.drain()
        writer.close()

    def now(self) -> float:
        return time.monotonic()

    def poll(self, timeout: float) -> list[Inbound]:
        try:
            items = [self._inbox.get(timeout=timeout)]
        except queue.Empty:
            return []
        while True:
            try:
                items.append(self._inbox.get_nowait())
            except queue.Empty:
                return items

    def send(self, conn: int, message: Message) -> None:
        data = encode(message)
        self._loop.call_soon_threadsafe(self._write, conn, data)

    def _write(self, conn: int, data: bytes) -> None:
        writer = self._writers.get(conn)
        if writer is not None and not writer.is_closing():
            writer.write(data)

    def align(self, n_workers: int) -> None:
        pass

    def on_iteration(self, iteration: int, ranks: Iterable[int]) -> None:
        pass

    def close(self) -> None:
        if self._loop is not None and self._stop is not None:
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread is not None:
            self._thread.join(timeout=5)
