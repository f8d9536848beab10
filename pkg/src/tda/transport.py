"""Wire format and channels.

Frame layout (all integers big-endian)::

    u32  length of everything that follows
    u8   kind tag
    u64  job id (0 for messages outside any job)
    u16  sender id length, then the sender id as UTF-8
    ...  kind-specific body

Body fields are encoded by the ``FIELDS`` schema of each payload class:
``str`` is a u16 length plus UTF-8, ``f64`` an IEEE-754 double, ``matrix``
a u32 row count, u32 column count and row-major doubles, ``endpoint`` a
``str`` host followed by a u16 port, and lists carry a u16 item count.

A channel may be read by one thread and written by one thread at the same
time.  Two concurrent readers or two concurrent writers raise
``ConcurrentChannelUse`` instead of interleaving bytes.
"""

from __future__ import annotations

import enum
import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from tda.errors import (ChannelClosed, ConcurrentChannelUse, DecodeError, FrameTooLarge,
                        IoError, UnknownKind, Unreachable)
from tda.matmul import Matrix

log = logging.getLogger(__name__)

MAX_FRAME = 2**31 - 1
_LEN = struct.Struct(">I")
_HEAD = struct.Struct(">BQH")

RECONNECT_BASE = 0.1
RECONNECT_CAP = 5.0
RECONNECT_ATTEMPTS = 5


class Kind(enum.IntEnum):
    REGISTER = 1
    REGISTER_ACK = 2
    HEARTBEAT = 3
    JOB_REQUEST = 4
    SUB_REQUEST = 5
    BROADCAST_OPERAND = 6
    PARTIAL_RESULT = 7
    JOB_ACCEPTED = 8
    ERROR = 9
    STATUS_REQUEST = 10
    STATUS = 11


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")

    @classmethod
    def parse(cls, text: str, allow_zero: bool = False) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep or not host:
            raise ValueError(f"expected host:port, got {text!r}")
        ep = cls(host, int(port))
        if ep.port == 0 and not allow_zero:
            raise ValueError(f"port must be 1-65535, got {text!r}")
        return ep

    def __str__(self):
        return f"{self.host}:{self.port}"


# -- payloads -----------------------------------------------------------------

@dataclass(frozen=True)
class Register:
    KIND: ClassVar = Kind.REGISTER
    FIELDS: ClassVar = (("endpoint", "endpoint"), ("services", ["str"]))
    endpoint: Endpoint
    services: tuple = ()


@dataclass(frozen=True)
class RegisterAck:
    KIND: ClassVar = Kind.REGISTER_ACK
    FIELDS: ClassVar = ()


@dataclass(frozen=True)
class Heartbeat:
    KIND: ClassVar = Kind.HEARTBEAT
    FIELDS: ClassVar = (("raw_speed", "f64"), ("load_factor", "f64"))
    raw_speed: float
    load_factor: float


@dataclass(frozen=True)
class JobRequest:
    KIND: ClassVar = Kind.JOB_REQUEST
    FIELDS: ClassVar = (("workload", "str"), ("total_load", "u64"), ("rows", "u32"),
                        ("cols", "u32"), ("reply_to", "endpoint"), ("policy", "u8"))
    workload: str
    total_load: int
    rows: int
    cols: int
    reply_to: Endpoint
    policy: int


@dataclass(frozen=True)
class SubRequest:
    KIND: ClassVar = Kind.SUB_REQUEST
    FIELDS: ClassVar = (("workload", "str"), ("row_start", "u64"), ("row_stop", "u64"),
                        ("client", "endpoint"))
    workload: str
    row_start: int
    row_stop: int
    client: Endpoint


@dataclass(frozen=True)
class BroadcastOperand:
    """Second operand for a job, plus the provider's own rows of the first."""

    KIND: ClassVar = Kind.BROADCAST_OPERAND
    FIELDS: ClassVar = (("row_start", "u64"), ("row_stop", "u64"),
                        ("first_block", "matrix"), ("second", "matrix"))
    row_start: int
    row_stop: int
    first_block: Matrix
    second: Matrix


@dataclass(frozen=True)
class PartialResult:
    KIND: ClassVar = Kind.PARTIAL_RESULT
    FIELDS: ClassVar = (("row_start", "u64"), ("row_stop", "u64"),
                        ("compute_seconds", "f64"), ("block", "matrix"))
    row_start: int
    row_stop: int
    compute_seconds: float
    block: Matrix


@dataclass(frozen=True)
class Assignment:
    FIELDS: ClassVar = (("provider_id", "str"), ("endpoint", "endpoint"), ("row_start", "u64"),
                        ("row_stop", "u64"), ("performance", "f64"))
    provider_id: str
    endpoint: Endpoint
    row_start: int
    row_stop: int
    performance: float


@dataclass(frozen=True)
class JobAccepted:
    KIND: ClassVar = Kind.JOB_ACCEPTED
    FIELDS: ClassVar = (("policy", "u8"), ("predicted_finish", "f64"),
                        ("assignments", [Assignment]))
    policy: int
    predicted_finish: float
    assignments: tuple = ()


@dataclass(frozen=True)
class Error:
    KIND: ClassVar = Kind.ERROR
    FIELDS: ClassVar = (("code", "str"), ("detail", "str"))
    code: str
    detail: str = ""


@dataclass(frozen=True)
class StatusRequest:
    KIND: ClassVar = Kind.STATUS_REQUEST
    FIELDS: ClassVar = ()


@dataclass(frozen=True)
class ProviderStatus:
    FIELDS: ClassVar = (("provider_id", "str"), ("endpoint", "endpoint"), ("performance", "f64"),
                        ("last_seen_age", "f64"), ("response_time", "f64"),
                        ("samples", "u32"), ("services", ["str"]))
    provider_id: str
    endpoint: Endpoint
    performance: float
    last_seen_age: float
    response_time: float
    samples: int
    services: tuple = ()


@dataclass(frozen=True)
class Status:
    KIND: ClassVar = Kind.STATUS
    FIELDS: ClassVar = (("providers", [ProviderStatus]),)
    providers: tuple = ()


PAYLOADS = {cls.KIND: cls for cls in (Register, RegisterAck, Heartbeat, JobRequest, SubRequest,
                                      BroadcastOperand, PartialResult, JobAccepted, Error,
                                      StatusRequest, Status)}


@dataclass(frozen=True)
class Message:
    kind: Kind
    job_id: int
    sender_id: str
    payload: object

    def __post_init__(self):
        if not 0 <= self.job_id < 2**64:
            raise ValueError("job_id must fit in 64 unsigned bits")
        if type(self.payload) is not PAYLOADS.get(self.kind):
            raise ValueError(f"{self.kind.name} message cannot carry {type(self.payload).__name__}")

    @classmethod
    def of(cls, payload, sender_id: str, job_id: int = 0) -> "Message":
        return cls(payload.KIND, job_id, sender_id, payload)


# -- codec --------------------------------------------------------------------

_SCALARS = {"u8": struct.Struct(">B"), "u16": struct.Struct(">H"), "u32": struct.Struct(">I"),
            "u64": struct.Struct(">Q"), "f64": struct.Struct(">d")}


def _put(out: list, ftype, value):
    if isinstance(ftype, str) and ftype in _SCALARS:
        out.append(_SCALARS[ftype].pack(value))
    elif ftype == "str":
        raw = value.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError("string longer than 65535 bytes")
        out.append(_SCALARS["u16"].pack(len(raw)))
        out.append(raw)
    elif ftype == "endpoint":
        _put(out, "str", value.host)
        out.append(_SCALARS["u16"].pack(value.port))
    elif ftype == "matrix":
        out.append(struct.pack(">II", value.rows, value.cols))
        out.append(value.data.astype(">f8").tobytes())
    elif isinstance(ftype, list):
        out.append(_SCALARS["u16"].pack(len(value)))
        for item in value:
            _put(out, ftype[0], item)
    else:
        for name, sub in ftype.FIELDS:
            _put(out, sub, getattr(value, name))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DecodeError("frame body truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def get(self, ftype):
        if isinstance(ftype, str) and ftype in _SCALARS:
            st = _SCALARS[ftype]
            return st.unpack(self.take(st.size))[0]
        if ftype == "str":
            try:
                return self.take(self.get("u16")).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DecodeError(f"bad UTF-8: {exc}") from None
        if ftype == "endpoint":
            host = self.get("str")
            return Endpoint(host, self.get("u16"))
        if ftype == "matrix":
            rows, cols = struct.unpack(">II", self.take(8))
            raw = self.take(8 * rows * cols)
            try:
                return Matrix(np.frombuffer(raw, dtype=">f8").astype(np.float64).reshape(rows, cols))
            except ValueError as exc:
                raise DecodeError(f"bad matrix: {exc}") from None
        if isinstance(ftype, list):
            return tuple(self.get(ftype[0]) for _ in range(self.get("u16")))
        return ftype(**{name: self.get(sub) for name, sub in ftype.FIELDS})


def encode(message: Message) -> bytes:
    sender = message.sender_id.encode("utf-8")
    parts = [_HEAD.pack(int(message.kind), message.job_id, len(sender)), sender]
    _put(parts, type(message.payload), message.payload)
    body = b"".join(parts)
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame of {len(body)} bytes exceeds {MAX_FRAME}")
    return _LEN.pack(len(body)) + body


def decode(frame: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(frame) < _LEN.size:
        raise DecodeError("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(frame)
    if length != len(frame) - _LEN.size:
        raise DecodeError(f"length prefix says {length} bytes, frame has {len(frame) - _LEN.size}")
    return _decode_body(frame, _LEN.size)


def _decode_body(buf: bytes, start: int) -> Message:
    r = _Reader(buf, start)
    tag, job_id, slen = _HEAD.unpack(r.take(_HEAD.size))
    try:
        kind = Kind(tag)
    except ValueError:
        raise UnknownKind(f"unknown kind tag {tag}") from None
    try:
        sender = r.take(slen).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"bad sender id: {exc}") from None
    payload = r.get(PAYLOADS[kind])
    if r.pos != len(buf):
        raise DecodeError(f"{len(buf) - r.pos} trailing bytes after {kind.name} body")
    return Message(kind, job_id, sender, payload)


class FrameDecoder:
    """Incremental decoder for a byte stream of concatenated frames."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        while len(self._buf) >= _LEN.size:
            (length,) = _LEN.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise FrameTooLarge(f"incoming frame of {length} bytes")
            end = _LEN.size + length
            if len(self._buf) < end:
                break
            out.append(decode(bytes(self._buf[:end])))
            del self._buf[:end]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


# -- channels -----------------------------------------------------------------

class Channel:
    def __init__(self):
        self._read_guard = threading.Lock()
        self._write_guard = threading.Lock()
        self.peer = ""

    def send(self, message: Message) -> None:
        data = encode(message)
        if not self._write_guard.acquire(blocking=False):
            raise ConcurrentChannelUse("channel already has an active writer")
        try:
            self._send_bytes(data)
        finally:
            self._write_guard.release()

    def receive(self) -> Message:
        if not self._read_guard.acquire(blocking=False):
            raise ConcurrentChannelUse("channel already has an active reader")
        try:
            return self._receive()
        finally:
            self._read_guard.release()

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _receive(self) -> Message:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


_CLOSED = object()


class LoopbackChannel(Channel):
    """In-process channel end.  Messages travel as encoded frames."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__()
        self._inbox, self._outbox = inbox, outbox
        self._decoder = FrameDecoder()
        self._ready: list[Message] = []
        self.closed = False

    @classmethod
    def pair(cls) -> tuple["LoopbackChannel", "LoopbackChannel"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def _send_bytes(self, data):
        if self.closed:
            raise ChannelClosed("loopback channel closed")
        self._outbox.put(data)

    def _receive(self):
        while not self._ready:
            item = self._inbox.get()
            if item is _CLOSED:
                self._inbox.put(_CLOSED)
                self.closed = True
                raise ChannelClosed("loopback channel closed")
            self._ready.extend(self._decoder.feed(item))
        return self._ready.pop(0)

    def close(self):
        self.closed = True
        self._inbox.put(_CLOSED)
        self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self.sock = sock
        self._decoder = FrameDecoder()
        self._ready: list[Message] = []
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            self.peer = "%s:%s" % sock.getpeername()[:2]
        except OSError:
            pass

    def _send_bytes(self, data):
        try:
            self.sock.sendall(data)
        except (BrokenPipeError, ConnectionResetError, ConnectionAbortedError) as exc:
            raise ChannelClosed(f"peer {self.peer} gone: {exc}") from None
        except OSError as exc:
            raise IoError(f"send to {self.peer} failed: {exc}") from None

    def _receive(self):
        while not self._ready:
            try:
                chunk = self.sock.recv(1 << 16)
            except (ConnectionResetError, ConnectionAbortedError) as exc:
                raise ChannelClosed(f"peer {self.peer} reset: {exc}") from None
            except OSError as exc:
                if self.sock.fileno() < 0:
                    raise ChannelClosed("socket closed locally") from None
                raise IoError(f"receive from {self.peer} failed: {exc}") from None
            if not chunk:
                raise ChannelClosed(f"peer {self.peer} closed the connection")
            self._ready.extend(self._decoder.feed(chunk))
        return self._ready.pop(0)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


# -- networks -----------------------------------------------------------------

def backoff_delays(attempts: int = RECONNECT_ATTEMPTS, base: float = RECONNECT_BASE,
                   cap: float = RECONNECT_CAP) -> list[float]:
    """Sleeps between connection attempts: base, 2*base, ... capped."""
    return [min(cap, base * 2**i) for i in range(attempts - 1)]


def _with_backoff(open_once, endpoint, attempts):
    delays = backoff_delays(attempts)
    for i in range(attempts):
        try:
            return open_once()
        except (OSError, Unreachable) as exc:
            if i == attempts - 1:
                raise Unreachable(f"{endpoint}: {exc}") from None
            log.debug("connect %s failed (%s), retrying in %.2fs", endpoint, exc, delays[i])
            time.sleep(delays[i])


class TcpListener:
    def __init__(self, endpoint: Endpoint):
        self.sock = socket.create_server((endpoint.host, endpoint.port), reuse_port=False)
        self.endpoint = Endpoint(endpoint.host, self.sock.getsockname()[1])

    def accept(self) -> TcpChannel:
        try:
            conn, _ = self.sock.accept()
        except OSError:
            raise ChannelClosed("listener closed") from None
        return TcpChannel(conn)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpNetwork:
    def listen(self, endpoint: Endpoint) -> TcpListener:
        return TcpListener(endpoint)

    def connect(self, endpoint: Endpoint, attempts: int = RECONNECT_ATTEMPTS) -> TcpChannel:
        return _with_backoff(
            lambda: TcpChannel(socket.create_connection((endpoint.host, endpoint.port), timeout=5.0)),
            endpoint, attempts)


class LoopbackListener:
    def __init__(self, network: "LoopbackNetwork", endpoint: Endpoint):
        self.network, self.endpoint = network, endpoint
        self._pending: queue.Queue = queue.Queue()

    def accept(self) -> LoopbackChannel:
        ch = self._pending.get()
        if ch is _CLOSED:
            self._pending.put(_CLOSED)
            raise ChannelClosed("listener closed")
        return ch

    def close(self):
        self.network._unbind(self.endpoint)
        self._pending.put(_CLOSED)


class LoopbackNetwork:
    """Process-local stand-in for TCP.  Port 0 picks the next free fake port."""

    def __init__(self):
        self._lock = threading.Lock()
        self._listeners: dict[Endpoint, LoopbackListener] = {}
        self._next_port = 1

    def listen(self, endpoint: Endpoint) -> LoopbackListener:
        with self._lock:
            if endpoint.port == 0:
                while Endpoint(endpoint.host, self._next_port) in self._listeners:
                    self._next_port += 1
                endpoint = Endpoint(endpoint.host, self._next_port)
                self._next_port += 1
            if endpoint in self._listeners:
                raise IoError(f"address in use: {endpoint}")
            lst = self._listeners[endpoint] = LoopbackListener(self, endpoint)
            return lst

    def _unbind(self, endpoint):
        with self._lock:
            self._listeners.pop(endpoint, None)

    def connect(self, endpoint: Endpoint, attempts: int = 1) -> LoopbackChannel:
        def once():
            with self._lock:
                lst = self._listeners.get(endpoint)
            if lst is None:
                raise Unreachable(f"nothing listening on {endpoint}")
            near, far = LoopbackChannel.pair()
            lst._pending.put(far)
            return near
        return _with_backoff(once, endpoint, attempts)
