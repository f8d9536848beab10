"""Closed-form speedup and overhead model for homogenized distribution.

Symbols follow the usual notation: ``T`` is standalone run time, ``P_i`` the
performance of provider *i*, ``P_S`` the performance of the standalone
reference machine, ``N_H = sum(P_i) / P_S`` the virtual machine count, and
``O(L) = M * L`` the distribution overhead for a load of ``L`` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from tda.errors import DegeneratePerformance, EmptyProviderSet, InvalidLoad


def _check_positive(value: float, what: str) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise DegeneratePerformance(f"{what} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class OverheadModel:
    """Load-linear overhead; ``slope_m`` is seconds per load unit (row)."""

    slope_m: float = 0.0

    def __post_init__(self):
        if not (self.slope_m >= 0 and math.isfinite(self.slope_m)):
            raise ValueError(f"slope_m must be >= 0 and finite, got {self.slope_m!r}")


@dataclass(frozen=True)
class SpeedupModel:
    standalone_time_t: float
    virtual_count_nh: float
    overhead: OverheadModel = OverheadModel()
    load_l: float = 0.0

    def __post_init__(self):
        if not (self.standalone_time_t > 0 and math.isfinite(self.standalone_time_t)):
            raise ValueError("standalone_time_t must be positive")
        if not (self.virtual_count_nh > 0 and math.isfinite(self.virtual_count_nh)):
            raise ValueError("virtual_count_nh must be positive")
        if self.load_l < 0:
            raise InvalidLoad(f"negative load {self.load_l!r}")


def total_performance(values: Iterable[float]) -> float:
    """Sum of provider performances (``P_T``)."""
    values = [_check_positive(v, "performance value") for v in values]
    if not values:
        raise EmptyProviderSet("no performance values to sum")
    return math.fsum(values)


def virtual_machine_count(p_total: float, p_standalone: float) -> float:
    """``N_H``: cluster performance measured in standalone-machine equivalents."""
    if p_standalone == 0:
        raise DegeneratePerformance("standalone performance is zero")
    p_standalone = _check_positive(p_standalone, "standalone performance")
    return float(p_total) / p_standalone


def overhead(load_l: float, model: OverheadModel) -> float:
    if load_l < 0:
        raise InvalidLoad(f"negative load {load_l!r}")
    return model.slope_m * load_l


def predicted_time(model: SpeedupModel) -> float:
    """``T / N_H + O(L)``; with a zero slope this is just ``T / N_H``."""
    return model.standalone_time_t / model.virtual_count_nh + overhead(model.load_l, model.overhead)


def predicted_speedup(model: SpeedupModel) -> float:
    return model.standalone_time_t / predicted_time(model)
