"""Turning heartbeat history into performance numbers and performance numbers
into integer scope lengths.

Scope lengths are apportioned with the largest-remainder (Hamilton) method in
exact rational arithmetic, so the sum is always the requested load and every
allotment is the floor or the ceiling of its fair share.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Mapping, Sequence

from tda.errors import DegeneratePerformance, EmptyProviderSet, NoSamples, PlanMismatch

DEFAULT_HALF_LIFE = 30.0
DEFAULT_EPSILON_FLOOR = 1e-6
# samples older than this many half-lives carry zero weight
AGE_CUTOFF_HALF_LIVES = 64


class Policy(enum.IntEnum):
    HOMOGENIZED = 1
    EQUAL_SPLIT = 2

    @property
    def label(self) -> str:
        return "homogenized" if self is Policy.HOMOGENIZED else "equal"

    @classmethod
    def parse(cls, text: str) -> "Policy":
        text = text.strip().lower()
        if text in ("homogenized", "homogenised", "h"):
            return cls.HOMOGENIZED
        if text in ("equal", "equal_split", "equal-split", "e"):
            return cls.EQUAL_SPLIT
        raise ValueError(f"unknown policy {text!r}")


@dataclass(frozen=True)
class PerformanceSample:
    provider_id: str
    reported_at: float
    raw_speed: float
    load_factor: float = 0.0

    def __post_init__(self):
        if not (self.raw_speed > 0 and math.isfinite(self.raw_speed)):
            raise DegeneratePerformance(f"raw_speed must be positive, got {self.raw_speed!r}")
        if not 0.0 <= self.load_factor <= 1.0:
            raise ValueError(f"load_factor must lie in [0, 1], got {self.load_factor!r}")

    @property
    def effective_speed(self) -> float:
        return self.raw_speed * (1.0 - self.load_factor)


@dataclass(frozen=True)
class HomogenizedPerformance:
    provider_id: str
    value: float
    computed_at: float = 0.0

    def __post_init__(self):
        if not self.value > 0:
            raise DegeneratePerformance(f"{self.provider_id}: performance must be positive")


@dataclass
class ScopePlan:
    total_load: int
    allotments: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(a < 0 for a in self.allotments.values()):
            raise ValueError("negative allotment")
        if sum(self.allotments.values()) != self.total_load:
            raise ValueError("allotments do not sum to total_load")

    def participants(self) -> list[str]:
        return [pid for pid, n in self.allotments.items() if n > 0]

    def ranges(self) -> dict[str, tuple[int, int]]:
        """Contiguous row ranges in plan order, ``[start, stop)``."""
        out, start = {}, 0
        for pid, n in self.allotments.items():
            out[pid] = (start, start + n)
            start += n
        return out


def ewma_speed(history: Sequence[PerformanceSample], now: float,
               half_life: float = DEFAULT_HALF_LIFE) -> float:
    """Recency-weighted mean effective speed, without the epsilon clamp."""
    if not history:
        raise NoSamples("no performance samples")
    if half_life <= 0:
        raise ValueError("half_life must be positive")
    num = den = 0.0
    for s in history:
        halvings = max(0.0, now - s.reported_at) / half_life
        if halvings >= AGE_CUTOFF_HALF_LIVES:
            continue
        w = 0.5 ** halvings
        num += w * s.effective_speed
        den += w
    if den == 0.0:
        # every sample is past the cutoff: fall back to the newest one
        return history[-1].effective_speed
    return num / den


def homogenize_performance(history: Sequence[PerformanceSample], now: float,
                           half_life: float = DEFAULT_HALF_LIFE,
                           epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> HomogenizedPerformance:
    """Collapse one provider's sample history into its homogenized performance.

    Weights halve every ``half_life`` seconds of sample age; the result is
    clamped below at ``epsilon_floor``.
    """
    value = ewma_speed(history, now, half_life)
    return HomogenizedPerformance(history[-1].provider_id, max(value, epsilon_floor), now)


def _perf_value(p) -> float:
    return p.value if isinstance(p, HomogenizedPerformance) else float(p)


def compute_scope_lengths(total_load: int, performances: Mapping[str, HomogenizedPerformance | float]) -> ScopePlan:
    """Apportion ``total_load`` rows in proportion to performance.

    Ties in fractional remainders go to the faster provider, then to the
    lexicographically smaller id.  Values may be ``HomogenizedPerformance``
    objects or plain numbers.
    """
    if total_load < 0:
        raise ValueError("total_load must be non-negative")
    if not performances:
        raise EmptyProviderSet("cannot plan over zero providers")
    perf = {}
    for pid, p in performances.items():
        v = _perf_value(p)
        if not (v > 0 and math.isfinite(v)):
            raise DegeneratePerformance(f"{pid}: non-positive performance {v!r}")
        perf[pid] = Fraction(v)
    p_total = sum(perf.values())
    fair = {pid: total_load * v / p_total for pid, v in perf.items()}
    alloc = {pid: math.floor(f) for pid, f in fair.items()}
    leftover = total_load - sum(alloc.values())
    order = sorted(perf, key=lambda pid: (-(fair[pid] - alloc[pid]), -perf[pid], pid))
    for pid in order[:leftover]:
        alloc[pid] += 1
    return ScopePlan(total_load, alloc)


def equal_scope_lengths(total_load: int, provider_ids: Sequence[str]) -> ScopePlan:
    """The non-homogenized baseline: equal shares, remainder to the earliest ids."""
    if not provider_ids:
        raise EmptyProviderSet("cannot plan over zero providers")
    if total_load < 0:
        raise ValueError("total_load must be non-negative")
    q, r = divmod(total_load, len(provider_ids))
    return ScopePlan(total_load, {pid: q + (1 if i < r else 0) for i, pid in enumerate(provider_ids)})


def predicted_finish_times(plan: ScopePlan, performances: Mapping[Hashable, HomogenizedPerformance | float]) -> dict[str, float]:
    """Pure compute time ``allotment / performance`` for each provider."""
    if set(plan.allotments) != set(performances):
        raise PlanMismatch("plan and performance map cover different providers")
    return {pid: n / _perf_value(performances[pid]) for pid, n in plan.allotments.items()}
