import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsn_outliers.errors import InvalidArgument, NoCandidates
from wsn_outliers.ingest import MoteLocation, synthesize_trace
from wsn_outliers.neighbors import (HistoryWindow, NeighborTable, deviation_bins,
                                    entropy_scores, entropy_weight, k_nearest_by_distance,
                                    monte_carlo_neighbor_count, neighbor_errors,
                                    select_best_neighbor)

from conftest import FIXTURES

ENTROPY_4222 = 1.3321790402101223  # mpmath, 30 digits, rounded to double


def _w(node, values):
    return HistoryWindow(node, "temperature", tuple(float(v) for v in values), 10)


def _from_deviations(e, mean=20.0):
    return [mean * (1 + x) for x in e]


def test_bins_all_equal():
    assert deviation_bins([20.0] * 10).tolist() == [0, 10, 0, 0]


def test_bins_one_large_positive():
    # one value at +0.6, nine balancing it at -0.6/9: deviations sum to zero
    e = [0.6] + [-0.6 / 9] * 9
    assert deviation_bins(_from_deviations(e)).tolist() == [0, 9, 0, 1]


def test_bins_boundaries():
    # -0.5 falls in the lowest bin, 0 in the second, 0.5 in the third
    vals = _from_deviations([-0.5, 0.5, 0, 0, 0, 0, 0, 0, 0, 0])
    assert deviation_bins(vals).tolist() == [1, 8, 1, 0]


def test_bins_zero_mean_uses_absolute_deviation():
    vals = [-1.0, 1.0, -0.2, 0.2, 0, 0, 0, 0, 0, 0]
    assert deviation_bins(vals).tolist() == [1, 7, 1, 1]


def test_entropy_values():
    assert entropy_weight((0, 10, 0, 0)) == 0.0
    assert entropy_weight((4, 2, 2, 2)) == pytest.approx(ENTROPY_4222, abs=1e-12)
    assert entropy_weight((5, 0, 0, 5)) == pytest.approx(math.log(2), abs=1e-15)
    assert entropy_weight((4, 2, 2, 2), mode="max") == pytest.approx(-0.4 * math.log(0.4))


def test_entropy_rejects():
    with pytest.raises(InvalidArgument):
        entropy_weight((0, 0, 0, 0))
    with pytest.raises(InvalidArgument):
        entropy_weight((1, -1, 0, 0))
    with pytest.raises(InvalidArgument):
        entropy_weight((1, 1, 0, 0), mode="bogus")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=4, max_size=4).filter(lambda c: sum(c) > 0))
def test_entropy_bounds(counts):
    h = entropy_weight(counts)
    assert -1e-15 <= h <= math.log(4) + 1e-12
    assert entropy_weight(counts, "max") <= h + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=10, max_size=10))
def test_bins_partition_window(values):
    c = deviation_bins(values)
    assert c.sum() == 10 and (c >= 0).all()


def test_select_highest_entropy():
    flat = _w(1, [20.0] * 10)
    spread = _w(2, _from_deviations([-0.6, -0.6, -0.2, -0.2, 0.2, 0.2, 0.6, 0.6, 0, 0]))
    assert select_best_neighbor([flat, spread], {1: 1.0, 2: 5.0}) == 2


def test_select_all_zero_falls_back_to_nearest():
    ws = [_w(n, [20.0] * 10) for n in (5, 3, 8)]
    assert select_best_neighbor(ws, {5: 2.0, 3: 4.0, 8: 1.0}) == 8


def test_select_tie_goes_to_nearer():
    a = _w(1, _from_deviations([0.6] + [-0.6 / 9] * 9))
    b = _w(2, _from_deviations([0.6] + [-0.6 / 9] * 9))
    assert select_best_neighbor([a, b], {1: 3.0, 2: 2.0}) == 2


def test_select_errors():
    with pytest.raises(NoCandidates):
        select_best_neighbor([])
    with pytest.raises(InvalidArgument):
        select_best_neighbor([_w(i, [1.0] * 10) for i in range(11)])
    with pytest.raises(InvalidArgument):
        _w(1, [1.0] * 9)
    with pytest.raises(InvalidArgument):
        _w(1, [1.0] * 9 + [math.nan])


def test_entropy_scores():
    s = entropy_scores([_w(4, [20.0] * 10)])[0]
    assert s.neighbor_id == 4 and s.bin_counts == (0, 10, 0, 0) and s.entropy == 0.0


def _grid(n):
    side = math.ceil(math.sqrt(n))
    return {i + 1: MoteLocation(i + 1, float(i % side), float(i // side)) for i in range(n)}


def test_k_nearest_grid():
    t = k_nearest_by_distance(_grid(9), 4)
    assert t.neighbors(5) == [2, 4, 6, 8]  # center
    assert t.neighbors(1) == [2, 4, 5, 3]  # corner: ties by id
    assert all(len(t.neighbors(n)) == 4 and n not in t.neighbors(n) for n in range(1, 10))
    d = [dist for _, dist in t.entries[1]]
    assert d == sorted(d)


def test_k_nearest_rejects():
    with pytest.raises(InvalidArgument):
        k_nearest_by_distance(_grid(3), 3)
    with pytest.raises(InvalidArgument):
        k_nearest_by_distance(_grid(1), 1)


def test_table_text_round_trip(tmp_path):
    locs = _grid(6)
    t = k_nearest_by_distance(locs, 3)
    t.save(tmp_path / "n.txt")
    back = NeighborTable.load(tmp_path / "n.txt", locs)
    assert back == t


def test_fixture_table_parses():
    t = NeighborTable.load(FIXTURES / "reference_neighbors.txt")
    assert len(t.entries) == 52
    assert t.neighbors(1) == [31, 2, 3, 33]
    assert all(len(t.neighbors(n)) == 4 for n in t.entries)


def test_monte_carlo_synthetic_picks_four():
    trace = synthesize_trace(16, 500, seed=0)
    assert monte_carlo_neighbor_count(trace, trials=2000, seed=0) == 4


def test_monte_carlo_deterministic():
    trace = synthesize_trace(9, 200, seed=2)
    assert neighbor_errors(trace, seed=5) == neighbor_errors(trace, seed=5)
    errors = neighbor_errors(trace, seed=5)
    assert set(errors) == set(range(1, 9))  # k capped at n - 1
