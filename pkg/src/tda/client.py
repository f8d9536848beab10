"""The thin client: submit a job, ship operands to the chosen providers,
and assemble the partial results that come back directly from them."""

from __future__ import annotations

import itertools
import logging
import queue
import random
import threading
import time
from dataclasses import dataclass, field

from tda.errors import (AssemblyTimeout, DimensionMismatch, DuplicateRange, Incomplete,
                        JobFailed, PlanMismatch, TDAError)
from tda.matmul import WORKLOAD_KIND, Matrix, merge_rows
from tda.node import Node
from tda.scheduler import Policy
from tda.transport import BroadcastOperand, Endpoint, JobRequest, Kind, Message

log = logging.getLogger(__name__)

ACCEPT_TIMEOUT = 30.0
DEADLINE_FACTOR = 10.0
DEADLINE_SLACK = 30.0

_client_ids = itertools.count(1)


class AssemblyBuffer:
    def __init__(self, expected, deadline: float = float("inf")):
        self.expected = sorted(tuple(r) for r in expected)
        self.received: dict[tuple[int, int], Matrix] = {}
        self.deadline = deadline

    def insert(self, row_range, block: Matrix) -> None:
        row_range = tuple(row_range)
        start, stop = row_range
        for s, e in self.received:
            if start < e and s < stop:
                raise DuplicateRange(f"rows [{start},{stop}) overlap received [{s},{e})")
        if row_range not in self.expected:
            raise PlanMismatch(f"rows [{start},{stop}) were not assigned")
        if block.rows != stop - start:
            raise DimensionMismatch(f"rows [{start},{stop}) arrived with {block.rows} rows")
        self.received[row_range] = block

    @property
    def complete(self) -> bool:
        return len(self.received) == len(self.expected)

    def missing(self) -> list[tuple[int, int]]:
        return [r for r in self.expected if r not in self.received]


def assemble(buffer: AssemblyBuffer) -> Matrix:
    if not buffer.complete:
        raise Incomplete(f"missing row ranges {buffer.missing()}")
    return merge_rows(buffer.received.items())


@dataclass
class TimingReport:
    policy: Policy
    load_rows: int
    total_seconds: float
    plan: dict = field(default_factory=dict)           # provider -> (start, stop)
    performances: dict = field(default_factory=dict)   # provider -> performance at planning
    receive_seconds: dict = field(default_factory=dict)
    compute_seconds: dict = field(default_factory=dict)

    @property
    def n_providers(self) -> int:
        return len(self.plan)

    @property
    def compute_max_seconds(self) -> float:
        return max(self.compute_seconds.values(), default=0.0)

    @property
    def overhead_seconds(self) -> float:
        return self.total_seconds - self.compute_max_seconds

    def allotments(self) -> dict[str, int]:
        return {pid: stop - start for pid, (start, stop) in self.plan.items()}


class Client(Node):
    def __init__(self, network, coordinator: Endpoint, listen: Endpoint = Endpoint("127.0.0.1", 0),
                 node_id: str | None = None):
        super().__init__(node_id or f"client-{next(_client_ids)}", network, listen)
        self.coordinator = coordinator
        self._jobs: dict[int, queue.Queue] = {}
        self._jobs_lock = threading.Lock()

    def handle(self, msg: Message, ch) -> None:
        with self._jobs_lock:
            q = self._jobs.get(msg.job_id)
        if q is None:
            log.info("event=stray kind=%s job_id=%d from=%s", msg.kind.name, msg.job_id, msg.sender_id)
            return
        q.put(msg)

    def submit(self, first: Matrix, second: Matrix, policy: Policy = Policy.HOMOGENIZED,
               job_id: int | None = None) -> tuple[Matrix, TimingReport]:
        if first.cols != second.rows:
            raise DimensionMismatch(f"cannot multiply {first.rows}x{first.cols} by {second.rows}x{second.cols}")
        job_id = job_id or random.getrandbits(63) + 1
        q: queue.Queue = queue.Queue()
        with self._jobs_lock:
            self._jobs[job_id] = q
        try:
            return self._run(job_id, q, first, second, Policy(policy))
        finally:
            with self._jobs_lock:
                self._jobs.pop(job_id, None)

    def _next(self, q: queue.Queue, deadline: float) -> Message | None:
        try:
            return q.get(timeout=max(0.0, deadline - time.monotonic()))
        except queue.Empty:
            return None

    def _run(self, job_id, q, first, second, policy):
        t0 = time.perf_counter()
        req = JobRequest(WORKLOAD_KIND, first.rows, first.rows, first.cols, self.endpoint, int(policy))
        self.peers.send(self.coordinator, Message.of(req, self.node_id, job_id))
        msg = self._next(q, time.monotonic() + ACCEPT_TIMEOUT)
        if msg is None:
            raise JobFailed(f"coordinator did not answer job {job_id}")
        if msg.kind is Kind.ERROR:
            raise JobFailed(f"{msg.payload.code}: {msg.payload.detail}")
        accepted = msg.payload
        deadline = time.monotonic() + DEADLINE_FACTOR * accepted.predicted_finish + DEADLINE_SLACK
        report = TimingReport(policy, first.rows, 0.0)
        for a in accepted.assignments:
            report.plan[a.provider_id] = (a.row_start, a.row_stop)
            report.performances[a.provider_id] = a.performance
        buffer = AssemblyBuffer(report.plan.values(), deadline)
        for a in accepted.assignments:
            op = BroadcastOperand(a.row_start, a.row_stop, first.row_block(a.row_start, a.row_stop), second)
            try:
                self.peers.send(a.endpoint, Message.of(op, self.node_id, job_id))
            except TDAError as exc:
                raise JobFailed(f"cannot reach provider {a.provider_id}: {exc}") from None
        owner = {rng: pid for pid, rng in report.plan.items()}
        while not buffer.complete:
            msg = self._next(q, deadline)
            if msg is None:
                raise AssemblyTimeout(f"job {job_id}: no result for rows {buffer.missing()}")
            if msg.kind is Kind.ERROR:
                raise JobFailed(f"{msg.sender_id}: {msg.payload.code}: {msg.payload.detail}")
            if msg.kind is not Kind.PARTIAL_RESULT:
                continue
            part = msg.payload
            rng = (part.row_start, part.row_stop)
            buffer.insert(rng, part.block)
            pid = owner[rng]
            report.receive_seconds[pid] = time.perf_counter() - t0
            report.compute_seconds[pid] = part.compute_seconds
        result = assemble(buffer)
        report.total_seconds = time.perf_counter() - t0
        return result, report
