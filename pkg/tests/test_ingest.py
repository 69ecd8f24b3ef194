import datetime as dt

import numpy as np
import pytest

from wsn_outliers.errors import EmptyTrace, InvalidArgument, TraceIOError
from wsn_outliers.ingest import (SensorReading, load_trace, parse_reading_line,
                                 synthesize_trace, write_locations, write_trace)

# first line of the public Intel lab data.txt, read by hand
INTEL_FIRST_LINE = "2004-03-31 03:38:15.757551 2 1 122.153 -3.91901 11.04 2.03397"


def test_parse_binds_fields_in_order():
    r = parse_reading_line(INTEL_FIRST_LINE)
    assert r == SensorReading(dt.date(2004, 3, 31), dt.time(3, 38, 15, 757551),
                              2, 1, 122.153, -3.91901, 11.04, 2.03397)


@pytest.mark.parametrize("line", [
    "2004-03-31 03:38:15.757551 2 1 122.153 -3.91901",
    "",
    "2004-03-31 03:38:15.757551 2 1 abc -3.91901 11.04 2.03397",
    "2004-03-31 03:38:15.757551 2 1 nan -3.91901 11.04 2.03397",
    "2004-03-31 03:38:15.757551 2 0 1 2 3 4",
    "2004-13-31 03:38:15.757551 2 1 1 2 3 4",
])
def test_parse_rejects_malformed(line):
    assert parse_reading_line(line) is None


def test_parse_short_fraction_and_no_fraction():
    r = parse_reading_line("2004-03-01 00:00:01.5 7 3 1 2 3 4")
    assert r.time == dt.time(0, 0, 1, 500000)
    assert parse_reading_line("2004-03-01 00:00:01 7 3 1 2 3 4").time == dt.time(0, 0, 1)


def test_line_round_trip():
    r = parse_reading_line(INTEL_FIRST_LINE)
    assert parse_reading_line(r.to_line()) == r


def _write(tmp_path, lines, locs="1 0 0\n2 1 0\n"):
    readings = tmp_path / "data.txt"
    readings.write_text("\n".join(lines) + "\n")
    locations = tmp_path / "locs.txt"
    locations.write_text(locs)
    return readings, locations


def test_load_counts_rejects(tmp_path):
    r, l = _write(tmp_path, [
        "2004-03-01 00:00:31.000000 1 2 20.0 40.0 100.0 2.6",
        "broken line",
        "2004-03-01 00:00:00.000000 0 1 20.0 40.0 100.0 2.6",
    ])
    trace = load_trace(r, l)
    assert len(trace) == 2
    assert trace.stats.rejected == 1
    assert trace.mote_id.tolist() == [1, 2]


def test_load_sorts_dedupes_and_drops_unlocated(tmp_path):
    r, l = _write(tmp_path, [
        "2004-03-01 00:01:02.000000 2 1 21.0 40.0 100.0 2.6",
        "2004-03-01 00:00:00.000000 0 1 20.0 40.0 100.0 2.6",
        "2004-03-01 00:00:00.000000 0 1 99.0 40.0 100.0 2.6",
        "2004-03-01 00:00:00.000000 0 9 20.0 40.0 100.0 2.6",
    ])
    trace = load_trace(r, l)
    assert trace.epoch.tolist() == [0, 2]
    assert trace.column("temperature").tolist() == [20.0, 21.0]
    assert trace.stats.duplicates == 1
    assert trace.stats.unlocated == 1


def test_load_empty_and_missing(tmp_path):
    r, l = _write(tmp_path, ["junk", "more junk"])
    with pytest.raises(EmptyTrace):
        load_trace(r, l)
    with pytest.raises(TraceIOError):
        load_trace(tmp_path / "nope.txt", l)


def test_synth_deterministic():
    a = synthesize_trace(2, 10, seed=7)
    b = synthesize_trace(2, 10, seed=7)
    assert a == b
    assert a.values.tobytes() == b.values.tobytes()
    assert a != synthesize_trace(2, 10, seed=8)


def test_synth_zero_jitter_identical_nodes():
    t = synthesize_trace(4, 50, seed=2, jitter=0.0)
    temp = t.column("temperature").reshape(4, 50)
    assert np.all(temp == temp[0])
    assert np.allclose(np.corrcoef(temp), 1.0)


def test_synth_adjacent_nodes_correlated():
    t = synthesize_trace(9, 2000, seed=0)
    temp = t.column("temperature").reshape(9, 2000)
    pairs = [(a, b) for a in range(9) for b in range(a + 1, 9)
             if abs(a % 3 - b % 3) + abs(a // 3 - b // 3) == 1]
    assert len(pairs) == 12
    assert np.mean([np.corrcoef(temp[a], temp[b])[0, 1] for a, b in pairs]) > 0.9


@pytest.mark.parametrize("kw", [dict(n_nodes=1, n_epochs=20), dict(n_nodes=3, n_epochs=9)])
def test_synth_preconditions(kw):
    with pytest.raises(InvalidArgument):
        synthesize_trace(**kw)


def test_export_round_trip(tmp_path):
    t = synthesize_trace(3, 25, seed=4)
    write_trace(t, tmp_path / "r.txt")
    write_locations(t.locations, tmp_path / "l.txt")
    back = load_trace(tmp_path / "r.txt", tmp_path / "l.txt")
    assert back == t


def test_order_invariant(small_trace):
    keys = list(zip(small_trace.mote_id.tolist(), small_trace.epoch.tolist()))
    assert keys == sorted(set(keys))


def test_filter(small_trace):
    sub = small_trace.filter(nodes=[2, 3], epoch_range=(10, 20))
    assert set(sub.mote_id.tolist()) == {2, 3}
    assert sub.epoch.min() == 10 and sub.epoch.max() == 19
    assert set(sub.locations) == {2, 3}
