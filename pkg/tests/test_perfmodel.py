import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tda.errors import DegeneratePerformance, EmptyProviderSet, InvalidLoad
from tda.perfmodel import (OverheadModel, SpeedupModel, overhead, predicted_speedup,
                           predicted_time, total_performance, virtual_machine_count)

pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


def model(t, nh, m=0.0, load=0.0):
    return SpeedupModel(t, nh, OverheadModel(m), load)


@pytest.mark.parametrize("values, expected", [([1.0, 1.0, 1.0], 3.0), ([2.5, 1.5], 4.0)])
def test_total_performance(values, expected):
    assert total_performance(values) == expected


def test_total_performance_rejects_empty_and_degenerate():
    with pytest.raises(EmptyProviderSet):
        total_performance([])
    with pytest.raises(DegeneratePerformance):
        total_performance([1.0, 0.0])


def test_virtual_machine_count():
    assert virtual_machine_count(4.0, 2.0) == 2.0
    assert virtual_machine_count(3.7, 3.7) == 1.0
    assert virtual_machine_count(total_performance([0.6] * 7), 0.6) == pytest.approx(7.0)
    with pytest.raises(DegeneratePerformance):
        virtual_machine_count(4.0, 0.0)


@pytest.mark.parametrize("load, m, expected", [(0, 20, 0), (1, 20, 20), (3, 0.5, 1.5)])
def test_overhead(load, m, expected):
    assert overhead(load, OverheadModel(m)) == expected


def test_overhead_negative_load():
    with pytest.raises(InvalidLoad):
        overhead(-1, OverheadModel(1.0))


def test_predicted_time_and_speedup_examples():
    assert predicted_time(model(100, 4, 0, 12345)) == 25
    assert predicted_time(model(100, 4, 1, 5)) == 30
    assert predicted_time(model(100, 1, 0, 0)) == 100
    assert predicted_speedup(model(100, 4)) == 4.0
    assert predicted_speedup(model(100, 4, 1, 5)) == pytest.approx(100 / 30)


def test_speedup_below_one_when_overhead_dominates():
    # T/N_H = 0.25, O(L) = 20 * 200
    assert predicted_speedup(model(1.0, 4, 20, 200)) < 1


@given(st.lists(pos, min_size=1, max_size=12), st.randoms())
def test_total_performance_permutation_invariant(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    assert total_performance(shuffled) == total_performance(values)


@given(st.lists(pos, min_size=1, max_size=8), st.lists(pos, min_size=1, max_size=8))
def test_total_performance_additive(a, b):
    assert total_performance(a + b) == pytest.approx(total_performance(a) + total_performance(b),
                                                     rel=1e-12)


@given(pos, pos, pos)
def test_virtual_count_scale_invariant(pt, ps, k):
    assert virtual_machine_count(k * pt, k * ps) == pytest.approx(virtual_machine_count(pt, ps), rel=1e-12)


@given(pos, pos, pos, st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=1e-3, max_value=10.0))
def test_speedup_strictly_decreasing_in_slope(t, nh, load, m, dm):
    assert predicted_speedup(model(t, nh, m + dm, load)) < predicted_speedup(model(t, nh, m, load))


@given(pos, pos, pos)
def test_speedup_approaches_nh_from_below(t, nh, load):
    values = [predicted_speedup(model(t, nh, m, load)) for m in (1.0, 0.1, 0.01, 0.001, 0.0)]
    assert values == sorted(values)
    assert all(v <= nh * (1 + 1e-12) for v in values)
    assert values[-1] == pytest.approx(nh, rel=1e-12)


@given(st.floats(min_value=0.01, max_value=100.0), pos, st.floats(min_value=0.1, max_value=50.0))
def test_cubic_job_speedup_increases_with_load(c, nh, m):
    # T grows as L^3 while the overhead grows as L
    speedups = [predicted_speedup(model(c * load**3, nh, m, load)) for load in (10, 100, 1000, 10000)]
    assert all(a < b for a, b in zip(speedups, speedups[1:]))
    assert speedups[-1] < nh


@given(st.floats(min_value=0, max_value=1e6), st.floats(min_value=0, max_value=1e6),
       st.floats(min_value=0, max_value=100))
def test_overhead_linear(a, b, m):
    om = OverheadModel(m)
    assert overhead(a + b, om) == pytest.approx(overhead(a, om) + overhead(b, om), rel=1e-12, abs=1e-9)


def test_model_validation():
    with pytest.raises(ValueError):
        OverheadModel(-1.0)
    with pytest.raises(ValueError):
        OverheadModel(math.inf)
    with pytest.raises(ValueError):
        model(0.0, 1.0)
    with pytest.raises(InvalidLoad):
        model(1.0, 1.0, 0.0, -2)
