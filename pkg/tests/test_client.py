import itertools

import pytest

from conftest import loopback_cluster
from tda.client import AssemblyBuffer, TimingReport, assemble
from tda.errors import DimensionMismatch, DuplicateRange, Incomplete, PlanMismatch
from tda.matmul import Matrix, multiply_reference
from tda.scheduler import Policy


def blocks(m, ranges):
    return [((s, e), m.row_block(s, e)) for s, e in ranges]


def test_assemble_two_ranges():
    m = Matrix.random(800, 3, 1)
    buf = AssemblyBuffer([(0, 400), (400, 800)])
    for rng, blk in blocks(m, [(400, 800), (0, 400)]):
        buf.insert(rng, blk)
    assert assemble(buf) == m


def test_single_range_unchanged():
    m = Matrix.random(5, 5, 2)
    buf = AssemblyBuffer([(0, 5)])
    buf.insert((0, 5), m)
    assert assemble(buf) == m


def test_any_arrival_order_gives_same_matrix():
    m = Matrix.random(10, 4, 3)
    ranges = [(0, 2), (2, 3), (3, 7), (7, 10)]
    for perm in itertools.permutations(blocks(m, ranges)):
        buf = AssemblyBuffer(ranges)
        for rng, blk in perm:
            buf.insert(rng, blk)
        assert assemble(buf) == m


def test_buffer_rejections():
    m = Matrix.random(10, 2, 4)
    buf = AssemblyBuffer([(0, 5), (5, 10)])
    buf.insert((0, 5), m.row_block(0, 5))
    with pytest.raises(DuplicateRange):
        buf.insert((0, 5), m.row_block(0, 5))
    with pytest.raises(DuplicateRange):
        buf.insert((3, 8), m.row_block(3, 8))
    with pytest.raises(PlanMismatch):
        buf.insert((6, 10), m.row_block(6, 10))
    with pytest.raises(DimensionMismatch):
        buf.insert((5, 10), m.row_block(5, 9))
    with pytest.raises(Incomplete):
        assemble(buf)
    assert buf.missing() == [(5, 10)]


def test_timing_report_split():
    r = TimingReport(Policy.HOMOGENIZED, 10, 2.0, plan={"a": (0, 6), "b": (6, 10)},
                     compute_seconds={"a": 1.2, "b": 1.5}, receive_seconds={"a": 1.6, "b": 1.9})
    assert r.compute_max_seconds == 1.5
    assert r.overhead_seconds == pytest.approx(0.5)
    assert r.allotments() == {"a": 6, "b": 4} and r.n_providers == 2


def test_distributed_product_three_providers():
    a, b = Matrix.random(800, 800, 1), Matrix.random(800, 800, 2)
    with loopback_cluster([2.0, 1.0, 1.0]) as (coord, providers, client):
        result, report = client.submit(a, b, Policy.HOMOGENIZED)
    assert result == multiply_reference(a, b)
    assert report.allotments() == {"p1": 400, "p2": 200, "p3": 200}
    assert report.total_seconds >= max(report.receive_seconds.values())
    assert report.total_seconds >= report.compute_max_seconds


def test_equal_split_over_the_wire():
    a, b = Matrix.random(10, 3, 1), Matrix.random(3, 2, 2)
    with loopback_cluster([5.0, 1.0, 1.0]) as (coord, providers, client):
        result, report = client.submit(a, b, Policy.EQUAL_SPLIT)
    assert result == multiply_reference(a, b)
    assert report.allotments() == {"p1": 4, "p2": 3, "p3": 3}


def test_one_by_one():
    with loopback_cluster([1.0, 1.0]) as (coord, providers, client):
        result, report = client.submit(Matrix([[3.0]]), Matrix([[4.0]]))
    assert result.tolist() == [[12.0]]
    assert report.n_providers == 1


def test_wrong_shape_sends_nothing(monkeypatch):
    with loopback_cluster([1.0]) as (coord, providers, client):
        sent = []
        monkeypatch.setattr(client.peers, "send", lambda *a: sent.append(a))
        with pytest.raises(DimensionMismatch):
            client.submit(Matrix.random(3, 4, 1), Matrix.random(3, 4, 2))
        assert sent == []
