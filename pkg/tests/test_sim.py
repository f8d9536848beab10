import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tda.errors import ConfigError, EmptyInput
from tda.perfmodel import OverheadModel, SpeedupModel, predicted_speedup
from tda.scheduler import Policy
from tda.sim import (CSV_COLUMNS, DEVIATION_COLUMNS, SimScenario, compare_live, deviation_csv,
                     replication_scenario, read_csv, simulate, sweep)

H, E = Policy.HOMOGENIZED, Policy.EQUAL_SPLIT


def last(outcome, policy, load):
    return outcome.series(policy, load)[-1]


def test_homogeneous_cluster_speedup():
    sc = SimScenario(speeds=[1, 1, 1, 1], standalone_speed=1, loads=(200, 400, 800))
    out = simulate(sc)
    for load in sc.loads:
        assert last(out, H, load).speedup_measured == 4.0


def test_heterogeneous_homogenized_speedup():
    out = simulate(SimScenario(speeds=[2, 1, 1], standalone_speed=2, loads=(800,)))
    assert last(out, H, 800).speedup_measured == 2.0


def test_heterogeneous_equal_split_speedup():
    sc = SimScenario(speeds=[2, 1, 1], standalone_speed=2, loads=(600,))
    run = last(simulate(sc), E, 600)
    # slowest provider: 200 rows at speed 1 against 600 rows at speed 2 standalone
    brute = max(n * sc.row_time(600, s) for n, s in zip((200, 200, 200), (2, 1, 1)))
    assert run.t_total_s == brute
    assert run.speedup_measured == 1.5


def test_sweep_cardinality_and_columns():
    text = sweep(replication_scenario())
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 91
    assert "\r" not in text


def test_formula_column_matches_model():
    sc = replication_scenario()
    for row in read_csv(sweep(sc)):
        total = sum(sc.speeds[:row["n_providers"]])
        expected = predicted_speedup(SpeedupModel(sc.standalone_time(row["load_rows"]),
                                                  total / sc.standalone_speed,
                                                  OverheadModel(sc.overhead_slope), row["load_rows"]))
        assert row["speedup_formula"] == pytest.approx(expected, rel=1e-8)


def test_small_load_below_unity():
    out = simulate(replication_scenario())
    assert last(out, H, 200).speedup_measured < 1
    assert last(out, H, 1000).speedup_measured > 1


def test_replication_scenario_shape():
    sc = replication_scenario()
    assert len(sc.speeds) == 9 and sc.overhead_slope == 20
    others = [s for i, s in enumerate(sc.speeds, 1) if i not in (6, 9)]
    assert max(sc.speeds[5], sc.speeds[8]) < min(others)
    out = simulate(sc)
    assert max(r.speedup_measured for r in out.runs if r.policy is H) > \
        max(r.speedup_measured for r in out.runs if r.policy is E)


def test_speedup_grows_with_load_and_stays_below_nh():
    sc = replication_scenario()
    out = simulate(sc)
    for n in sc.counts:
        s = [out.get(H, load, n).speedup_measured for load in sc.loads]
        assert all(a < b for a, b in zip(s, s[1:]))
        nh = sc.virtual_count(n)
        assert (nh - s[-1]) / nh < (nh - s[0]) / nh


def test_zero_overhead_speedup_approaches_formula_with_load():
    sc = dataclasses.replace(replication_scenario(), overhead_slope=0.0,
                             loads=(100, 1000, 10_000, 100_000))
    out = simulate(sc)
    gaps = [abs(out.get(H, load, 9).speedup_measured / sc.virtual_count(9) - 1) for load in sc.loads]
    assert gaps[-1] < 1e-4
    assert gaps[-1] < gaps[0]


def test_overhead_linear_in_load():
    sc = replication_scenario()
    for r in simulate(sc).runs:
        assert r.t_overhead_s == 20 * r.load_rows


def test_determinism_with_noise():
    sc = dataclasses.replace(replication_scenario(), noise=0.1, seed=42)
    assert sweep(sc) == sweep(sc)
    assert sweep(sc) != sweep(dataclasses.replace(sc, seed=43))


def test_noise_deviation_is_bounded():
    base = simulate(replication_scenario())
    devs = []
    for seed in range(100):
        noisy = simulate(dataclasses.replace(replication_scenario(), noise=0.1, seed=seed))
        for a, b in zip(base.runs, noisy.runs):
            devs.append(b.speedup_measured / a.speedup_measured - 1)
    devs = np.abs(devs)
    assert devs.max() > 0
    assert devs.max() <= 0.1 + 1e-12


def test_jitter_shared_between_policies():
    sc = dataclasses.replace(replication_scenario(), noise=0.2, seed=3, speeds=[1.0] * 4,
                             standalone_speed=1.0, loads=(400,))
    out = simulate(sc)
    h, e = out.get(H, 400, 4), out.get(E, 400, 4)
    assert h.plan.allotments == e.plan.allotments
    assert h.compute_s == e.compute_s


def test_compare_live_self_consistent():
    sc = SimScenario(speeds=[2, 1, 1], standalone_speed=2, overhead_slope=0.5, loads=(1200, 2400))
    # fair shares are whole rows for every prefix at these loads
    devs = compare_live([r for r in simulate(sc).runs if r.policy is H], sc)
    assert all(d.abs_dev == pytest.approx(0, abs=1e-12) for d in devs)
    text = deviation_csv(devs, sc)
    assert text.splitlines()[0] == ",".join(DEVIATION_COLUMNS)


def test_compare_live_accepts_csv_rows():
    sc = replication_scenario()
    rows = read_csv(sweep(dataclasses.replace(sc, noise=0.1, seed=1)))
    devs = compare_live(rows, sc)
    assert len(devs) == 90
    assert any(d.abs_dev != 0 for d in devs)


def test_compare_live_empty():
    with pytest.raises(EmptyInput):
        compare_live([], replication_scenario())


def test_scenario_file_round_trip(tmp_path):
    sc = SimScenario(speeds=[2.0, 1.5], standalone_speed=1.0, overhead_slope=3.0, loads=(10, 20),
                     policies=(E,), latency=0.25, noise=0.05, seed=9, provider_counts=(2,))
    f = tmp_path / "s.conf"
    f.write_text(sc.to_text())
    assert SimScenario.from_file(f) == sc


@pytest.mark.parametrize("text", ["standalone_speed = 1\n", "speeds = 1,2\nstandalone_speed = 1\nbogus = 3\n",
                                  "speeds = 1,-2\nstandalone_speed = 1\n",
                                  "speeds = 1,x\nstandalone_speed = 1\n", "speeds = 1\nstandalone_speed = 1\nseed = q\n"])
def test_bad_scenario_files(tmp_path, text):
    f = tmp_path / "s.conf"
    f.write_text(text)
    with pytest.raises(ConfigError):
        SimScenario.from_file(f)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=9), st.integers(1, 1500))
def test_adding_a_provider_costs_at_most_one_row_of_compute(speeds, load):
    sc = SimScenario(speeds=speeds, standalone_speed=1.0, loads=(load,), policies=(H,))
    runs = simulate(sc).series(H, load)
    for a, b in zip(runs, runs[1:]):
        slack = sc.row_time(load, min(speeds[:b.n_providers]))
        assert b.t_compute_max_s <= a.t_compute_max_s + slack


def test_diminishing_returns_from_per_provider_latency():
    # the second provider saves less compute than the latency it adds
    sc = SimScenario(speeds=[1.0, 0.05], standalone_speed=1.0, loads=(800,), policies=(H,), latency=50.0)
    one, two = simulate(sc).series(H, 800)
    saving = one.t_compute_max_s - two.t_compute_max_s
    assert 0 < saving < sc.latency
    assert two.t_total_s > one.t_total_s
    fast = dataclasses.replace(sc, speeds=(1.0, 1.0))
    one, two = simulate(fast).series(H, 800)
    assert two.t_total_s < one.t_total_s
