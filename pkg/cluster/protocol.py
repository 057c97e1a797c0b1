"""Binary wire format shared by the scheduler, parameter server and workers.

A frame is ``<u32 length><u8 tag><body>`` where ``length`` counts the tag and
the body. Every integer and float is little-endian; arrays are a ``u32`` element
count followed by the elements (float64 for payloads, int64 for sample indices).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .exceptions import ProtocolError

FRAME_HEADER = struct.Struct("<IB")
_COUNT = struct.Struct("<I")
DEFAULT_MAX_FRAME_BYTES = 64 * 1024 * 1024

_SCALARS = {
    "i32": struct.Struct("<i"),
    "u32": struct.Struct("<I"),
    "u64": struct.Struct("<Q"),
    "f64": struct.Struct("<d"),
}
_ARRAYS = {
    "f64[]": np.dtype("<f8"),
    "i64[]": np.dtype("<i8"),
    "i32[]": np.dtype("<i4"),
}


class Message:
    TAG: ClassVar[int]
    LAYOUT: ClassVar[tuple[tuple[str, str], ...]]

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        for name, kind in self.LAYOUT:
            mine, theirs = getattr(self, name), getattr(other, name)
            if kind in _ARRAYS:
                if np.asarray(mine).tobytes() != np.asarray(theirs).tobytes() or len(mine) != len(theirs):
                    return False
            elif kind == "f64":
                if struct.pack("<d", mine) != struct.pack("<d", theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    __hash__ = None


def _message(tag: int, *layout: tuple[str, str]):
    def decorate(cls):
        cls.TAG = tag
        cls.LAYOUT = layout
        return dataclass(frozen=True, eq=False)(cls)

    return decorate


@_message(1, ("worker_id", "i32"))
class Hello(Message):
    """Join request; worker_id -1 asks the scheduler to assign one."""

    worker_id: int


@_message(2, ("worker_id", "i32"), ("seq", "u64"))
class Heartbeat(Message):
    worker_id: int
    seq: int


@_message(
    3,
    ("worker_id", "i32"),
    ("epoch", "u32"),
    ("iteration", "u64"),
    ("version", "u64"),
    ("samples", "i64[]"),
)
class Assign(Message):
    worker_id: int
    epoch: int
    iteration: int
    version: int
    samples: np.ndarray


@_message(
    4,
    ("worker_id", "i32"),
    ("iteration", "u64"),
    ("version", "u64"),
    ("local_batch", "u32"),
    ("loss_sum", "f64"),
    ("grad", "f64[]"),
)
class PushGrad(Message):
    worker_id: int
    iteration: int
    version: int
    local_batch: int
    loss_sum: float
    grad: np.ndarray


@_message(5, ("worker_id", "i32"))
class PullWeights(Message):
    worker_id: int


@_message(6, ("version", "u64"), ("payload", "f64[]"))
class Weights(Message):
    version: int
    payload: np.ndarray


@_message(7, ("roster", "i32[]"))
class Resize(Message):
    roster: np.ndarray


@_message(8)
class Shutdown(Message):
    pass


@_message(9, ("worker_id", "i32"), ("workload", "str"))
class Welcome(Message):
    """Answer to Hello: the assigned id and the JSON description of model and dataset."""

    worker_id: int
    workload: str


MESSAGE_TYPES: dict[int, type[Message]] = {
    cls.TAG: cls for cls in (Hello, Heartbeat, Assign, PushGrad, PullWeights, Weights, Resize, Shutdown, Welcome)
}


def encode(message: Message) -> bytes:
    parts = []
    for name, kind in message.LAYOUT:
        value = getattr(message, name)
        if kind in _SCALARS:
            try:
                parts.append(_SCALARS[kind].pack(value))
            except struct.error as exc:
                raise ValueError(f"{type(message).__name__}.{name}: {exc}") from exc
        elif kind == "str":
            raw = value.encode("utf-8")
            parts.append(_COUNT.pack(len(raw)) + raw)
        else:
            array = np.ascontiguousarray(value, dtype=_ARRAYS[kind])
            parts.append(_COUNT.pack(array.size) + array.tobytes())
    body = b"".join(parts)
    return FRAME_HEADER.pack(len(body) + 1, message.TAG) + body


def _decode_body(cls: type[Message], body: memoryview, base: int) -> Message:
    values = {}
    cursor = 0
    for name, kind in cls.LAYOUT:
        if kind in _SCALARS:
            codec = _SCALARS[kind]
            if cursor + codec.size > len(body):
                raise ProtocolError(f"truncated {cls.__name__}.{name}", base + cursor)
            values[name] = codec.unpack_from(body, cursor)[0]
            cursor += codec.size
            continue
        if cursor + _COUNT.size > len(body):
            raise ProtocolError(f"truncated length of {cls.__name__}.{name}", base + cursor)
        count = _COUNT.unpack_from(body, cursor)[0]
        cursor += _COUNT.size
        width = 1 if kind == "str" else _ARRAYS[kind].itemsize
        if cursor + count * width > len(body):
            raise ProtocolError(f"{cls.__name__}.{name} overruns the frame", base + cursor - _COUNT.size)
        raw = bytes(body[cursor:cursor + count * width])
        if kind == "str":
            try:
                values[name] = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ProtocolError(f"invalid UTF-8 in {cls.__name__}.{name}", base + cursor + exc.start) from exc
        else:
            values[name] = np.frombuffer(raw, dtype=_ARRAYS[kind]).astype(_ARRAYS[kind].newbyteorder("="))
        cursor += count * width
    if cursor != len(body):
        raise ProtocolError(f"{len(body) - cursor} trailing bytes after {cls.__name__}", base + cursor)
    return cls(**values)


def decode_frame(frame: bytes, *, base_offset: int = 0, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> Message:
    """Decode exactly one complete frame."""
    view = memoryview(frame)
    if len(view) < FRAME_HEADER.size:
        raise ProtocolError("truncated frame header", base_offset + len(view))
    length, tag = FRAME_HEADER.unpack_from(view, 0)
    if length < 1 or length > max_frame_bytes:
        raise ProtocolError(f"declared frame length {length} outside [1, {max_frame_bytes}]", base_offset)
    if len(view) - 4 < length:
        raise ProtocolError(f"truncated frame: {len(view) - 4} of {length} bytes", base_offset + len(view))
    if len(view) - 4 > length:
        raise ProtocolError("bytes after the end of the frame", base_offset + 4 + length)
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise ProtocolError(f"unknown message tag {tag}", base_offset + 4)
    return _decode_body(cls, view[FRAME_HEADER.size:], base_offset + FRAME_HEADER.size)


def decode(frame: bytes, **options) -> Message:
    return decode_frame(frame, **options)


class FrameDecoder:
    """Incremental decoder for a byte stream; `feed` returns every completed message."""

    def __init__(self, max_frame_bytes: int = DEFAULT_MAX_FRAME_BYTES) -> None:
        self.max_frame_bytes = max_frame_bytes
        self._buffer = bytearray()
        self._consumed = 0

    @property
    def pending(self) -> int:
        return len(self._buffer)

    def feed(self, data: bytes) -> list[Message]:
        self._buffer.extend(data)
        messages = []
        while len(self._buffer) >= 4:
            length = _COUNT.unpack_from(self._buffer, 0)[0]
            if length < 1 or length > self.max_frame_bytes:
                raise ProtocolError(f"declared frame length {length} outside [1, {self.max_frame_bytes}]", self._consumed)
            if len(self._buffer) < 4 + length:
                break
            frame = bytes(self._buffer[:4 + length])
            messages.append(decode_frame(frame, base_offset=self._consumed, max_frame_bytes=self.max_frame_bytes))
            del self._buffer[:4 + length]
            self._consumed += 4 + length
        return messages

    def close(self) -> None:
        if self._buffer:
            raise ProtocolError(f"stream ended inside a frame ({len(self._buffer)} bytes pending)", self._consumed)
