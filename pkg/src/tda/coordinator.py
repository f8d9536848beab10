"""The coordinator: provider registry, performance table, planning and dispatch."""

from __future__ import annotations

import bisect
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from tda.config import read_kv
from tda.errors import (ConfigError, JobFailed, NoProviders, RegistrationRejected, TDAError,
                        UnknownProvider, Unreachable)
from tda.matmul import WORKLOAD_KIND
from tda.node import Node
from tda.scheduler import (DEFAULT_EPSILON_FLOOR, DEFAULT_HALF_LIFE, HomogenizedPerformance,
                           PerformanceSample, Policy, ScopePlan, compute_scope_lengths,
                           equal_scope_lengths, ewma_speed)
from tda.transport import (Assignment, Endpoint, Error, JobAccepted, JobRequest,
                           Kind, Message, ProviderStatus, RegisterAck, Status,
                           SubRequest)

log = logging.getLogger(__name__)

# one performance unit is one 64x64 block-row of multiply-adds per second
REFERENCE_ROW_COST = 64 * 64


@dataclass
class CoordinatorConfig:
    heartbeat_interval: float = 2.0
    staleness_window: float | None = None
    half_life: float = DEFAULT_HALF_LIFE
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR
    history_bound: int = 64
    snapshot_path: str | None = None

    @property
    def staleness(self) -> float:
        if self.staleness_window is not None:
            return self.staleness_window
        return 3 * self.heartbeat_interval

    @classmethod
    def from_file(cls, path) -> "CoordinatorConfig":
        raw = read_kv(path)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{path}: unknown setting {key!r}")
            try:
                if key == "snapshot_path":
                    kwargs[key] = value
                elif key == "history_bound":
                    kwargs[key] = int(value)
                else:
                    kwargs[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{path}: {key}: {exc}") from None
        config = cls(**kwargs)
        if config.heartbeat_interval <= 0 or config.half_life <= 0 or config.history_bound < 1:
            raise ConfigError(f"{path}: heartbeat_interval, half_life and history_bound must be positive")
        return config


@dataclass
class ProviderEntry:
    endpoint: Endpoint
    services: frozenset
    history: list = field(default_factory=list)
    last_seen: float | None = None
    response_time: float = math.nan


class PerformanceTable:
    """Registered providers and their bounded, time-ordered heartbeat history.

    Samples are kept sorted by report time, so the table after any
    interleaving of events with distinct timestamps is the same.
    """

    def __init__(self, history_bound: int = 64):
        self.history_bound = history_bound
        self.entries: dict[str, ProviderEntry] = {}

    def register(self, provider_id: str, endpoint, services) -> ProviderEntry:
        if not provider_id:
            raise RegistrationRejected("empty provider id")
        if not isinstance(endpoint, Endpoint) or not endpoint.host or not 1 <= endpoint.port <= 65535:
            raise RegistrationRejected(f"malformed endpoint {endpoint!r}")
        entry = self.entries.get(provider_id)
        if entry is None:
            entry = self.entries[provider_id] = ProviderEntry(endpoint, frozenset(services))
        else:
            entry.endpoint = endpoint
            entry.services = frozenset(services)
        return entry

    def ingest(self, sample: PerformanceSample) -> None:
        entry = self.entries.get(sample.provider_id)
        if entry is None:
            raise UnknownProvider(f"heartbeat from unregistered provider {sample.provider_id!r}")
        bisect.insort(entry.history, sample, key=lambda s: s.reported_at)
        if len(entry.history) > self.history_bound:
            del entry.history[0]
        entry.last_seen = entry.history[-1].reported_at

    def eligible(self, workload: str, now: float, config: CoordinatorConfig) -> dict[str, HomogenizedPerformance]:
        """Fresh providers offering ``workload``, sorted by id, with their performance."""
        out = {}
        for pid in sorted(self.entries):
            entry = self.entries[pid]
            if workload not in entry.services or not entry.history:
                continue
            if now - entry.last_seen > config.staleness:
                continue
            speed = ewma_speed(entry.history, now, config.half_life)
            if speed < config.epsilon_floor:
                continue
            out[pid] = HomogenizedPerformance(pid, speed, now)
        return out

    def performance(self, provider_id: str, now: float, config: CoordinatorConfig) -> float:
        entry = self.entries[provider_id]
        if not entry.history:
            return 0.0
        return max(ewma_speed(entry.history, now, config.half_life), config.epsilon_floor)

    def to_json(self) -> str:
        providers = [{"id": pid, "host": e.endpoint.host, "port": e.endpoint.port,
                      "services": sorted(e.services)} for pid, e in sorted(self.entries.items())]
        return json.dumps({"providers": providers}, indent=1)

    def load_json(self, text: str) -> None:
        for p in json.loads(text)["providers"]:
            self.register(p["id"], Endpoint(p["host"], int(p["port"])), p["services"])


@dataclass
class JobRecord:
    job_id: int
    client_endpoint: Endpoint
    workload: str
    total_load: int
    plan: ScopePlan
    policy: Policy
    performances: dict
    dispatched_at: float | None = None
    cost_per_row: float = 1.0

    def __post_init__(self):
        assert self.plan.total_load == self.total_load

    def predicted_finish(self) -> float:
        times = [n * self.cost_per_row / self.performances[pid].value
                 for pid, n in self.plan.allotments.items() if n > 0]
        return max(times, default=0.0)


class Coordinator:
    """Planning and dispatch logic, independent of how messages travel."""

    def __init__(self, config: CoordinatorConfig | None = None, clock=time.monotonic):
        self.config = config or CoordinatorConfig()
        self.clock = clock
        self.table = PerformanceTable(self.config.history_bound)
        if self.config.snapshot_path and Path(self.config.snapshot_path).exists():
            self.table.load_json(Path(self.config.snapshot_path).read_text())
            log.info("event=snapshot_loaded providers=%d", len(self.table.entries))

    def register_provider(self, provider_id: str, endpoint: Endpoint, services=(WORKLOAD_KIND,)) -> RegisterAck:
        self.table.register(provider_id, endpoint, services)
        log.info("event=register provider=%s endpoint=%s", provider_id, endpoint)
        self.save_snapshot()
        return RegisterAck()

    def ingest_heartbeat(self, sample: PerformanceSample) -> None:
        self.table.ingest(sample)

    def save_snapshot(self) -> None:
        path = self.config.snapshot_path
        if not path:
            return
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".snapshot-")
        with os.fdopen(fd, "w") as f:
            f.write(self.table.to_json())
        os.replace(tmp, path)

    def plan_job(self, job_id: int, request: JobRequest, policy: Policy | int | None = None,
                 exclude=()) -> JobRecord:
        policy = Policy(request.policy if policy is None else policy)
        now = self.clock()
        perfs = {pid: p for pid, p in self.table.eligible(request.workload, now, self.config).items()
                 if pid not in exclude}
        if not perfs:
            raise NoProviders(f"no fresh provider offers {request.workload!r}")
        if policy is Policy.HOMOGENIZED:
            plan = compute_scope_lengths(request.total_load, perfs)
        else:
            plan = equal_scope_lengths(request.total_load, list(perfs))
        # square-job estimate: a row of an n-column job costs n*n multiply-adds
        cost = max(request.cols, 1) ** 2 / REFERENCE_ROW_COST
        record = JobRecord(job_id, request.reply_to, request.workload, request.total_load,
                           plan, policy, perfs, cost_per_row=cost)
        log.info("event=plan job_id=%d policy=%s allotments=%s", job_id, policy.label,
                 ",".join(f"{k}:{v}" for k, v in plan.allotments.items()))
        return record

    def _unreachable(self, record: JobRecord, peers) -> list[str]:
        bad = []
        for pid in record.plan.participants():
            try:
                peers.ensure(self.table.entries[pid].endpoint)
            except Unreachable as exc:
                log.warning("event=unreachable job_id=%d provider=%s detail=%s", record.job_id, pid, exc)
                bad.append(pid)
        return bad

    def dispatch(self, record: JobRecord, request: JobRequest, peers, sender_id: str = "coordinator") -> tuple[JobRecord, JobAccepted]:
        """Send one SUB_REQUEST per participating provider.

        Unreachable providers are dropped and the job is replanned once over
        the rest; a second failure raises ``JobFailed``.
        """
        if not record.plan.participants():
            raise JobFailed("plan assigns no rows")
        bad = self._unreachable(record, peers)
        if bad:
            try:
                record = self.plan_job(record.job_id, request, record.policy, exclude=bad)
            except NoProviders:
                raise JobFailed(f"all planned providers unreachable: {','.join(bad)}") from None
            again = self._unreachable(record, peers)
            if again:
                raise JobFailed(f"providers unreachable after replan: {','.join(again)}")
        ranges = record.plan.ranges()
        assignments = []
        for pid in record.plan.participants():
            entry = self.table.entries[pid]
            start, stop = ranges[pid]
            sub = SubRequest(record.workload, start, stop, record.client_endpoint)
            t0 = time.perf_counter()
            try:
                peers.send(entry.endpoint, Message.of(sub, sender_id, record.job_id))
            except TDAError as exc:
                raise JobFailed(f"sending to {pid} failed: {exc}") from None
            entry.response_time = time.perf_counter() - t0
            assignments.append(Assignment(pid, entry.endpoint, start, stop, record.performances[pid].value))
        record.dispatched_at = self.clock()
        log.info("event=dispatch job_id=%d providers=%d", record.job_id, len(assignments))
        return record, JobAccepted(int(record.policy), record.predicted_finish(), tuple(assignments))

    def status(self) -> Status:
        now = self.clock()
        rows = []
        for pid, e in sorted(self.table.entries.items()):
            age = now - e.last_seen if e.last_seen is not None else -1.0
            rows.append(ProviderStatus(pid, e.endpoint, self.table.performance(pid, now, self.config),
                                       age, e.response_time, len(e.history), tuple(sorted(e.services))))
        return Status(tuple(rows))


class CoordinatorServer(Node):
    def __init__(self, network, listen: Endpoint, config: CoordinatorConfig | None = None,
                 node_id: str = "coordinator"):
        super().__init__(node_id, network, listen)
        self.logic = Coordinator(config)
        self.jobs: dict[int, JobRecord] = {}

    def handle(self, msg: Message, ch) -> None:
        p = msg.payload
        if msg.kind is Kind.REGISTER:
            try:
                self.reply(ch, self.logic.register_provider(msg.sender_id, p.endpoint, p.services))
            except RegistrationRejected as exc:
                self.reply(ch, Error(exc.code, str(exc)))
        elif msg.kind is Kind.HEARTBEAT:
            try:
                sample = PerformanceSample(msg.sender_id, self.logic.clock(), p.raw_speed,
                                           min(max(p.load_factor, 0.0), 1.0))
                self.logic.ingest_heartbeat(sample)
            except TDAError as exc:
                log.warning("event=heartbeat_dropped provider=%s detail=%s", msg.sender_id, exc)
        elif msg.kind is Kind.JOB_REQUEST:
            self._job(msg, ch)
        elif msg.kind is Kind.STATUS_REQUEST:
            self.reply(ch, self.logic.status())
        elif msg.kind is Kind.ERROR:
            log.warning("event=provider_error job_id=%d provider=%s code=%s detail=%s",
                        msg.job_id, msg.sender_id, p.code, p.detail)
        else:
            log.warning("event=unexpected kind=%s from=%s", msg.kind.name, msg.sender_id)

    def _job(self, msg: Message, ch) -> None:
        req = msg.payload
        try:
            if msg.job_id in self.jobs:
                raise JobFailed(f"duplicate job id {msg.job_id}")
            record = self.logic.plan_job(msg.job_id, req)
            record, accepted = self.logic.dispatch(record, req, self.peers, self.node_id)
        except TDAError as exc:
            log.warning("event=job_failed job_id=%d code=%s detail=%s", msg.job_id, exc.code, exc)
            self.reply(ch, Error(exc.code, str(exc)), msg.job_id)
            return
        self.jobs[msg.job_id] = record
        self.reply(ch, accepted, msg.job_id)
