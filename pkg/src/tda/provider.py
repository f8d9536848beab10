"""The service-provider daemon."""

from __future__ import annotations

import logging
import queue
import statistics
import threading
import time
from dataclasses import dataclass

from tda.errors import TDAError
from tda.matmul import WORKLOAD_KIND, Matrix, multiply_block
from tda.node import Node
from tda.transport import (BroadcastOperand, Endpoint, Error, Heartbeat, Kind, Message,
                           PartialResult, Register, SubRequest)

log = logging.getLogger(__name__)

CALIBRATION_SIZE = 64
CALIBRATION_REPEATS = 8
# block products per timed repetition; single 64x64 products are too short to time reliably
CALIBRATION_BATCH = 8


@dataclass
class ProviderConfig:
    id: str
    coordinator: Endpoint
    listen: Endpoint = Endpoint("127.0.0.1", 0)
    heartbeat_interval: float = 2.0
    calibration: float | None = None
    synthetic_slowdown: float = 1.0
    operand_timeout: float = 30.0
    services: tuple = (WORKLOAD_KIND,)

    def __post_init__(self):
        if self.heartbeat_interval <= 0:
            raise ValueError("heartbeat_interval must be positive")
        if self.synthetic_slowdown < 1:
            raise ValueError("synthetic_slowdown must be >= 1")
        if self.calibration is not None and not self.calibration > 0:
            raise ValueError("calibration must be positive")


def calibrate(calibration: float | None = None, slowdown: float = 1.0) -> float:
    """Reference speed in rows per second.

    One reference row is a row of a 64x64 by 64x64 product.  A fixed
    ``calibration`` is returned untouched; otherwise the median of eight timed
    repetitions (each a batch of block products) is used and divided by
    ``slowdown``.
    """
    if calibration is not None:
        return float(calibration)
    a = Matrix.random(CALIBRATION_SIZE, CALIBRATION_SIZE, seed=1)
    b = Matrix.random(CALIBRATION_SIZE, CALIBRATION_SIZE, seed=2)
    multiply_block(a, b)
    times = []
    for _ in range(CALIBRATION_REPEATS):
        t0 = time.perf_counter()
        for _ in range(CALIBRATION_BATCH):
            multiply_block(a, b)
        times.append((time.perf_counter() - t0) / CALIBRATION_BATCH)
    return CALIBRATION_SIZE / statistics.median(times) / slowdown


def busy_wait_until(deadline: float) -> None:
    while time.perf_counter() < deadline:
        pass


def compute_slowed(block: Matrix, second: Matrix, slowdown: float = 1.0) -> tuple[Matrix, float]:
    """Multiply and then spin until ``slowdown`` times the real compute time has passed."""
    t0 = time.perf_counter()
    out = multiply_block(block, second)
    elapsed = time.perf_counter() - t0
    if slowdown > 1:
        busy_wait_until(t0 + slowdown * elapsed)
    return out, time.perf_counter() - t0


class BusyMeter:
    """Fraction of wall time spent on sub-requests since the last ``take``."""

    def __init__(self, now: float | None = None):
        self._lock = threading.Lock()
        self._window_start = time.monotonic() if now is None else now
        self._busy = 0.0
        self._busy_since: float | None = None

    def start(self, now: float | None = None) -> None:
        with self._lock:
            self._busy_since = time.monotonic() if now is None else now

    def stop(self, now: float | None = None) -> None:
        now = time.monotonic() if now is None else now
        with self._lock:
            if self._busy_since is not None:
                self._busy += now - max(self._busy_since, self._window_start)
                self._busy_since = None

    def take(self, now: float | None = None) -> float:
        now = time.monotonic() if now is None else now
        with self._lock:
            busy = self._busy
            if self._busy_since is not None:
                busy += now - max(self._busy_since, self._window_start)
            span = now - self._window_start
            self._window_start, self._busy = now, 0.0
        if span <= 0:
            return 0.0
        return min(1.0, max(0.0, busy / span))


class Provider(Node):
    def __init__(self, config: ProviderConfig, network):
        super().__init__(config.id, network, config.listen)
        self.config = config
        self.speed = calibrate(config.calibration, config.synthetic_slowdown)
        self.meter = BusyMeter()
        self.registered = threading.Event()
        self.subs: dict[int, SubRequest] = {}
        self.operands: dict[int, BroadcastOperand] = {}
        self.work: queue.Queue = queue.Queue()
        self.completed = 0

    def start(self, register_timeout: float = 10.0):
        super().start()
        self._spawn(self._work_loop, "worker")
        reg = Register(self.endpoint, tuple(self.config.services))
        self.peers.send(self.config.coordinator, Message.of(reg, self.node_id))
        if not self.registered.wait(register_timeout):
            self.stop()
            raise TDAError(f"{self.node_id}: no REGISTER_ACK from {self.config.coordinator}")
        self.send_heartbeat()
        self._spawn(self._heartbeat_loop, "heartbeat")
        log.info("event=provider_ready provider=%s endpoint=%s speed=%.6g", self.node_id, self.endpoint, self.speed)
        return self

    def send_heartbeat(self) -> None:
        hb = Heartbeat(self.speed, self.meter.take())
        try:
            self.peers.send(self.config.coordinator, Message.of(hb, self.node_id))
        except TDAError as exc:
            log.warning("event=heartbeat_failed provider=%s detail=%s", self.node_id, exc)

    def _heartbeat_loop(self):
        while not self.stopping.wait(self.config.heartbeat_interval):
            self.send_heartbeat()

    def handle(self, msg, ch) -> None:
        if isinstance(msg, tuple):
            self._expire(msg[1])
            return
        if msg.kind is Kind.REGISTER_ACK:
            self.registered.set()
        elif msg.kind is Kind.SUB_REQUEST:
            self.subs[msg.job_id] = msg.payload
            self._maybe_ready(msg.job_id)
        elif msg.kind is Kind.BROADCAST_OPERAND:
            self.operands[msg.job_id] = msg.payload
            self._maybe_ready(msg.job_id)
        elif msg.kind is Kind.ERROR:
            log.warning("event=error_received from=%s code=%s detail=%s",
                        msg.sender_id, msg.payload.code, msg.payload.detail)
        else:
            log.warning("event=unexpected kind=%s from=%s", msg.kind.name, msg.sender_id)

    def _maybe_ready(self, job_id: int) -> None:
        sub, operand = self.subs.get(job_id), self.operands.get(job_id)
        if sub is not None and operand is not None:
            del self.subs[job_id], self.operands[job_id]
            self.work.put((job_id, sub, operand))
        elif sub is not None and sub.row_stop == sub.row_start:
            del self.subs[job_id]
        else:
            timer = threading.Timer(self.config.operand_timeout, self.inbox.put,
                                    args=((("expire", job_id), None),))
            timer.daemon = True
            timer.start()

    def _expire(self, job_id: int) -> None:
        self.operands.pop(job_id, None)
        sub = self.subs.pop(job_id, None)
        if sub is not None:
            self._fail(job_id, sub.client, "OperandTimeout",
                       f"no operand within {self.config.operand_timeout}s")

    def _fail(self, job_id: int, client: Endpoint, code: str, detail: str) -> None:
        log.warning("event=sub_request_failed job_id=%d code=%s detail=%s", job_id, code, detail)
        err = Message.of(Error(code, detail), self.node_id, job_id)
        for target in (client, self.config.coordinator):
            try:
                self.peers.send(target, err)
            except TDAError as exc:
                log.info("event=error_undeliverable target=%s detail=%s", target, exc)

    def _work_loop(self):
        while not self.stopping.is_set():
            try:
                job_id, sub, operand = self.work.get(timeout=0.2)
            except queue.Empty:
                continue
            self.execute_sub_request(job_id, sub, operand)

    def execute_sub_request(self, job_id: int, sub: SubRequest, operand: BroadcastOperand) -> None:
        n = sub.row_stop - sub.row_start
        if n <= 0:
            return
        block, second = operand.first_block, operand.second
        if (operand.row_start, operand.row_stop) != (sub.row_start, sub.row_stop) or block.rows != n:
            self._fail(job_id, sub.client, "RowRangeMismatch",
                       f"sub-request rows [{sub.row_start},{sub.row_stop}) but operand carries "
                       f"[{operand.row_start},{operand.row_stop}) with {block.rows} rows")
            return
        if block.cols != second.rows:
            self._fail(job_id, sub.client, "DimensionMismatch",
                       f"block {block.rows}x{block.cols} vs operand {second.rows}x{second.cols}")
            return
        self.meter.start()
        try:
            result, seconds = compute_slowed(block, second, self.config.synthetic_slowdown)
        finally:
            self.meter.stop()
        part = PartialResult(sub.row_start, sub.row_stop, seconds, result)
        try:
            self.peers.send(sub.client, Message.of(part, self.node_id, job_id))
        except TDAError as exc:
            log.warning("event=result_undeliverable job_id=%d detail=%s", job_id, exc)
        self.completed += 1
        log.info("event=sub_request_done job_id=%d rows=%d seconds=%.4f", job_id, n, seconds)
