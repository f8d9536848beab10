"""Virtual-clock simulation of equal-split and homogenized distribution.

Work model: an ``L``-row square job costs ``L**3`` multiply-adds and a speed
``P`` is measured in rows per time unit at the reference size
``reference_rows`` (800 by default).  A provider with ``r`` rows of an
``L``-row job therefore computes for ``r * L**2 / (P * reference_rows**2)``.
The distribution overhead ``M * L`` (plus ``latency`` per participating
provider) is charged once on the critical path.

Every number here is in the scenario's own time unit; nothing is tied to the
wall clock.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from tda.config import float_list, int_list, read_kv
from tda.errors import ConfigError, EmptyInput
from tda.perfmodel import (OverheadModel, SpeedupModel, predicted_speedup, total_performance,
                           virtual_machine_count)
from tda.scheduler import Policy, ScopePlan, compute_scope_lengths, equal_scope_lengths

CSV_COLUMNS = ("run_id", "policy", "load_rows", "n_providers", "n_h", "t_standalone_s",
               "t_total_s", "t_compute_max_s", "t_overhead_s", "speedup_measured",
               "speedup_formula")
DEVIATION_COLUMNS = CSV_COLUMNS + ("speedup_abs_dev", "speedup_rel_dev")

DEFAULT_LOADS = (200, 400, 600, 800, 1000)
REPLICATION_SLOPE = 20.0


@dataclass(frozen=True)
class SimScenario:
    speeds: tuple
    standalone_speed: float
    overhead_slope: float = 0.0
    loads: tuple = DEFAULT_LOADS
    policies: tuple = (Policy.HOMOGENIZED, Policy.EQUAL_SPLIT)
    latency: float = 0.0
    noise: float = 0.0
    seed: int = 0
    reference_rows: int = 800
    provider_counts: tuple | None = None   # None: every prefix 1..len(speeds)

    def __post_init__(self):
        object.__setattr__(self, "speeds", tuple(float(s) for s in self.speeds))
        object.__setattr__(self, "loads", tuple(int(x) for x in self.loads))
        object.__setattr__(self, "policies", tuple(Policy(p) for p in self.policies))
        if not self.speeds or any(not s > 0 for s in self.speeds):
            raise ValueError("speeds must be a non-empty list of positive values")
        if not self.standalone_speed > 0:
            raise ValueError("standalone_speed must be positive")
        if not self.loads or any(x <= 0 for x in self.loads):
            raise ValueError("loads must be a non-empty list of positive row counts")
        if not self.policies:
            raise ValueError("at least one policy is required")
        if self.overhead_slope < 0 or self.latency < 0:
            raise ValueError("overhead_slope and latency must be non-negative")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")
        if self.provider_counts is not None:
            counts = tuple(int(n) for n in self.provider_counts)
            if not counts or any(not 1 <= n <= len(self.speeds) for n in counts):
                raise ValueError("provider_counts must lie in 1..len(speeds)")
            object.__setattr__(self, "provider_counts", counts)

    @property
    def counts(self) -> tuple:
        return self.provider_counts or tuple(range(1, len(self.speeds) + 1))

    def provider_ids(self, n: int) -> list[str]:
        return [f"p{i + 1:02d}" for i in range(n)]

    def row_time(self, load: int, speed: float) -> float:
        """Time for one row of an ``load``-row job on a machine of ``speed``."""
        return load * load / (speed * self.reference_rows ** 2)

    def standalone_time(self, load: int) -> float:
        return load * self.row_time(load, self.standalone_speed)

    def virtual_count(self, n: int) -> float:
        return virtual_machine_count(total_performance(self.speeds[:n]), self.standalone_speed)

    def formula_speedup(self, load: int, n: int) -> float:
        model = SpeedupModel(self.standalone_time(load), self.virtual_count(n),
                             OverheadModel(self.overhead_slope), load)
        return predicted_speedup(model)

    @classmethod
    def from_kv(cls, kv: dict, source: str = "<scenario>") -> "SimScenario":
        parsers = {"speeds": float_list, "standalone_speed": float,
                   "overhead_slope": float, "latency": float, "noise": float, "seed": int,
                   "reference_rows": int, "loads": lambda v: tuple(int_list(v)),
                   "provider_counts": lambda v: tuple(int_list(v)),
                   "policies": lambda v: tuple(Policy.parse(p) for p in v.split(",") if p.strip())}
        for key in ("speeds", "standalone_speed"):
            if key not in kv:
                raise ConfigError(f"{source}: missing required key {key!r}")
        args = {}
        for key, value in kv.items():
            if key not in parsers:
                raise ConfigError(f"{source}: unknown scenario key {key!r}")
            try:
                args[key] = parsers[key](value)
            except ValueError as exc:
                raise ConfigError(f"{source}: {key}: {exc}") from None
        try:
            return cls(**args)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "SimScenario":
        return cls.from_kv(read_kv(path), str(path))

    def to_text(self) -> str:
        lines = [f"speeds = {','.join(repr(s) for s in self.speeds)}",
                 f"standalone_speed = {self.standalone_speed!r}",
                 f"overhead_slope = {self.overhead_slope!r}",
                 f"loads = {','.join(map(str, self.loads))}",
                 f"policies = {','.join(p.label for p in self.policies)}",
                 f"latency = {self.latency!r}",
                 f"noise = {self.noise!r}",
                 f"seed = {self.seed}",
                 f"reference_rows = {self.reference_rows}"]
        if self.provider_counts is not None:
            lines.append(f"provider_counts = {','.join(map(str, self.provider_counts))}")
        return "\n".join(lines) + "\n"


@dataclass
class SimRun:
    run_id: int
    policy: Policy
    load_rows: int
    n_providers: int
    n_h: float
    t_standalone_s: float
    plan: ScopePlan
    compute_s: tuple          # per provider, in plan order
    t_overhead_s: float
    speedup_formula: float

    @property
    def t_compute_max_s(self) -> float:
        return max(self.compute_s)

    @property
    def t_total_s(self) -> float:
        return self.t_compute_max_s + self.t_overhead_s

    @property
    def speedup_measured(self) -> float:
        return self.t_standalone_s / self.t_total_s

    def row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


@dataclass
class SimOutcome:
    scenario: SimScenario
    runs: list = field(default_factory=list)

    def get(self, policy: Policy, load: int, n: int) -> SimRun:
        for r in self.runs:
            if r.policy == policy and r.load_rows == load and r.n_providers == n:
                return r
        raise KeyError((policy, load, n))

    def series(self, policy: Policy, load: int) -> list[SimRun]:
        return sorted((r for r in self.runs if r.policy == policy and r.load_rows == load),
                      key=lambda r: r.n_providers)


def jitter_factors(scenario: SimScenario, load: int, n: int) -> np.ndarray:
    """Per-provider speed multipliers, uniform in [1-a, 1+a]; shared by both policies."""
    if scenario.noise == 0:
        return np.ones(n)
    rng = np.random.default_rng([scenario.seed, load, n])
    return rng.uniform(1 - scenario.noise, 1 + scenario.noise, size=n)


def plan_for(policy: Policy, load: int, ids: Sequence[str], speeds: Sequence[float]) -> ScopePlan:
    if policy is Policy.HOMOGENIZED:
        return compute_scope_lengths(load, dict(zip(ids, speeds)))
    return equal_scope_lengths(load, ids)


def simulate(scenario: SimScenario) -> SimOutcome:
    """Run every (policy, load, provider count) combination of the scenario."""
    outcome = SimOutcome(scenario)
    run_id = 0
    for policy in scenario.policies:
        for load in scenario.loads:
            t_standalone = scenario.standalone_time(load)
            for n in scenario.counts:
                ids = scenario.provider_ids(n)
                speeds = scenario.speeds[:n]
                jitter = jitter_factors(scenario, load, n)
                plan = plan_for(policy, load, ids, speeds)
                compute = tuple(plan.allotments[pid] * scenario.row_time(load, s * j)
                                for pid, s, j in zip(ids, speeds, jitter))
                participants = len(plan.participants())
                overhead = scenario.overhead_slope * load + scenario.latency * participants
                run_id += 1
                outcome.runs.append(SimRun(run_id, policy, load, n, scenario.virtual_count(n),
                                           t_standalone, plan, compute, overhead,
                                           scenario.formula_speedup(load, n)))
    return outcome


def _fmt(value) -> str:
    if isinstance(value, Policy):
        return value.label
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_csv(rows: Iterable[dict], columns: Sequence[str] = CSV_COLUMNS, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def sweep(scenario: SimScenario) -> str:
    """CSV dataset: one row per (policy, load, provider-count prefix)."""
    return write_csv(r.row() for r in simulate(scenario).runs)


def read_csv(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        conv = {}
        for k, v in row.items():
            if k == "policy":
                conv[k] = Policy.parse(v)
            elif k in ("run_id", "load_rows", "n_providers"):
                conv[k] = int(v)
            else:
                conv[k] = float(v)
        out.append(conv)
    return out


def replication_scenario() -> SimScenario:
    """Nine providers, the sixth and ninth markedly slow, ``M = 20``.

    Time unit: read it as milliseconds.  The standalone machine does 0.01
    rows/ms at 800 rows (80 s for the 800x800 product), and the provider
    speeds are a guess shaped after the qualitative behaviour to be
    reproduced, not measured values.  Version 1.
    """
    speeds = (0.010, 0.009, 0.012, 0.008, 0.011, 0.003, 0.009, 0.010, 0.0025)
    return SimScenario(speeds=speeds, standalone_speed=0.010, overhead_slope=REPLICATION_SLOPE,
                       loads=DEFAULT_LOADS)


@dataclass(frozen=True)
class Deviation:
    policy: Policy
    load_rows: int
    n_providers: int
    t_total_s: float
    t_compute_max_s: float
    t_overhead_s: float
    speedup_measured: float
    speedup_formula: float

    @property
    def abs_dev(self) -> float:
        return self.speedup_measured - self.speedup_formula

    @property
    def rel_dev(self) -> float:
        return self.abs_dev / self.speedup_formula


def compare_live(reports: Sequence, scenario: SimScenario) -> list[Deviation]:
    """Measured speedup of each report against the formula for the same load
    and provider count.

    A report is anything with ``policy``, ``load_rows``, ``n_providers``,
    ``t_total_s``, ``t_compute_max_s`` and ``t_overhead_s`` (a ``SimRun``, a
    CSV row dict or a live timing record).
    """
    if not reports:
        raise EmptyInput("no reports to compare")
    out = []
    for rep in reports:
        get = rep.get if isinstance(rep, dict) else (lambda k, r=rep: getattr(r, k))
        load, n = int(get("load_rows")), int(get("n_providers"))
        t_total = float(get("t_total_s"))
        out.append(Deviation(Policy(get("policy")), load, n, t_total, float(get("t_compute_max_s")),
                             float(get("t_overhead_s")), scenario.standalone_time(load) / t_total,
                             scenario.formula_speedup(load, n)))
    return out


def deviation_csv(devs: Sequence[Deviation], scenario: SimScenario) -> str:
    rows = []
    for i, d in enumerate(devs, 1):
        rows.append({"run_id": i, "policy": d.policy, "load_rows": d.load_rows,
                     "n_providers": d.n_providers, "n_h": scenario.virtual_count(d.n_providers),
                     "t_standalone_s": scenario.standalone_time(d.load_rows),
                     "t_total_s": d.t_total_s, "t_compute_max_s": d.t_compute_max_s,
                     "t_overhead_s": d.t_overhead_s, "speedup_measured": d.speedup_measured,
                     "speedup_formula": d.speedup_formula, "speedup_abs_dev": d.abs_dev,
                     "speedup_rel_dev": d.rel_dev})
    return write_csv(rows, DEVIATION_COLUMNS)
