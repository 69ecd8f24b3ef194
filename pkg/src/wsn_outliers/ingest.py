"""Reading the Intel Berkeley lab trace and generating synthetic look-alikes.

The trace file has one reading per line::

    2004-03-31 03:38:15.757551 2 1 122.153 -3.91901 11.04 2.03397

i.e. date, time, epoch, mote id, temperature, humidity, light, voltage.
The companion ``mote_locs.txt`` lists ``mote_id x y`` in meters.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyTrace, InvalidArgument, TraceIOError

log = logging.getLogger(__name__)

ATTRIBUTES = ("temperature", "humidity", "light", "voltage")
WINDOW = 10
SAMPLE_PERIOD_S = 31
_SYNTH_START = dt.datetime(2004, 2, 28)


@dataclass(frozen=True)
class SensorReading:
    date: dt.date
    time: dt.time
    epoch: int
    mote_id: int
    temperature: float
    humidity: float
    light: float
    voltage: float

    @property
    def values(self) -> tuple[float, float, float, float]:
        return (self.temperature, self.humidity, self.light, self.voltage)

    def to_line(self) -> str:
        stamp = dt.datetime.combine(self.date, self.time)
        return format_line(stamp, self.epoch, self.mote_id, self.values)


@dataclass(frozen=True)
class MoteLocation:
    mote_id: int
    x: float
    y: float


@dataclass(frozen=True)
class LoadStats:
    rejected: int = 0
    unlocated: int = 0
    duplicates: int = 0


@dataclass(eq=False)
class Trace:
    """Columnar container of readings sorted by ``(mote_id, epoch)``.

    ``values`` has one column per entry of ``attribute_names``. Storage is
    columnar because the full Intel trace holds ~2.3M rows.
    """

    mote_id: np.ndarray
    epoch: np.ndarray
    stamp: np.ndarray  # datetime64[us]
    values: np.ndarray
    locations: dict[int, MoteLocation]
    attribute_names: tuple[str, ...] = ATTRIBUTES
    stats: LoadStats = field(default_factory=LoadStats)

    def __len__(self) -> int:
        return len(self.mote_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.attribute_names == other.attribute_names
            and self.locations == other.locations
            and np.array_equal(self.mote_id, other.mote_id)
            and np.array_equal(self.epoch, other.epoch)
            and np.array_equal(self.stamp, other.stamp)
            and np.array_equal(self.values, other.values)
        )

    @property
    def node_ids(self) -> list[int]:
        return sorted(int(m) for m in np.unique(self.mote_id))

    def column(self, attribute: str) -> np.ndarray:
        return self.values[:, self.attribute_index(attribute)]

    def attribute_index(self, attribute: str) -> int:
        try:
            return self.attribute_names.index(attribute)
        except ValueError:
            raise InvalidArgument(f"unknown attribute {attribute!r}") from None

    def node_slice(self, mote_id: int) -> slice:
        lo = np.searchsorted(self.mote_id, mote_id, side="left")
        hi = np.searchsorted(self.mote_id, mote_id, side="right")
        return slice(int(lo), int(hi))

    def with_values(self, values: np.ndarray) -> "Trace":
        return Trace(self.mote_id, self.epoch, self.stamp, values,
                     self.locations, self.attribute_names, self.stats)

    def reading(self, i: int) -> SensorReading:
        stamp = self.stamp[i].astype(dt.datetime)
        return SensorReading(stamp.date(), stamp.time(), int(self.epoch[i]),
                             int(self.mote_id[i]), *map(float, self.values[i]))

    def readings(self) -> Iterator[SensorReading]:
        for i in range(len(self)):
            yield self.reading(i)

    def filter(self, nodes: Iterable[int] | None = None,
               epoch_range: tuple[int, int] | None = None) -> "Trace":
        """Restrict to a node subset and/or a half-open epoch range."""
        nodes = None if nodes is None else {int(n) for n in nodes}
        mask = np.ones(len(self), dtype=bool)
        if nodes is not None:
            mask &= np.isin(self.mote_id, sorted(nodes))
        if epoch_range is not None:
            lo, hi = epoch_range
            mask &= (self.epoch >= lo) & (self.epoch < hi)
        keep = {m: loc for m, loc in self.locations.items()
                if nodes is None or m in nodes}
        return Trace(self.mote_id[mask], self.epoch[mask], self.stamp[mask],
                     self.values[mask], keep, self.attribute_names, self.stats)


def format_line(stamp: dt.datetime, epoch: int, mote_id: int,
                values: Sequence[float]) -> str:
    text = " ".join(repr(float(v)) for v in values)
    return f"{stamp:%Y-%m-%d %H:%M:%S.%f} {epoch} {mote_id} {text}"


def _parse_stamp(date: str, time: str) -> dt.datetime:
    if "." in time:
        whole, frac = time.split(".", 1)
        if not frac.isdigit():
            raise ValueError(time)
        time = f"{whole}.{frac[:6].ljust(6, '0')}"
    return dt.datetime.fromisoformat(f"{date} {time}")


def parse_reading_line(line: str) -> SensorReading | None:
    """Parse one trace line; ``None`` marks a malformed line."""
    parts = line.split()
    if len(parts) != 8:
        return None
    try:
        stamp = _parse_stamp(parts[0], parts[1])
        epoch, mote_id = int(parts[2]), int(parts[3])
        vals = [float(p) for p in parts[4:]]
    except ValueError:
        return None
    if epoch < 0 or mote_id < 1 or not all(math.isfinite(v) for v in vals):
        return None
    return SensorReading(stamp.date(), stamp.time(), epoch, mote_id, *vals)


def parse_locations(lines: Iterable[str]) -> dict[int, MoteLocation]:
    locs: dict[int, MoteLocation] = {}
    for line in lines:
        parts = line.split()
        if len(parts) < 3:
            continue
        try:
            mote, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            continue
        if math.isfinite(x) and math.isfinite(y) and mote not in locs:
            locs[mote] = MoteLocation(mote, x, y)
    return locs


def load_locations(path: str | Path) -> dict[int, MoteLocation]:
    try:
        with open(path, encoding="utf-8", errors="replace") as fh:
            return parse_locations(fh)
    except OSError as exc:
        raise TraceIOError(f"cannot read {path}: {exc}", path=str(path)) from exc


def from_readings(readings: Iterable[SensorReading],
                  locations: dict[int, MoteLocation],
                  rejected: int = 0) -> Trace:
    """Build a sorted, de-duplicated Trace; unlocated motes are dropped."""
    seen: set[tuple[int, int]] = set()
    rows = []
    unlocated = duplicates = 0
    for r in readings:
        if r.mote_id not in locations:
            unlocated += 1
            continue
        key = (r.mote_id, r.epoch)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        rows.append(r)
    if not rows:
        raise EmptyTrace("no valid readings survived parsing",
                         rejected=rejected, unlocated=unlocated)
    rows.sort(key=lambda r: (r.mote_id, r.epoch))
    stamps = np.array([dt.datetime.combine(r.date, r.time) for r in rows],
                      dtype="datetime64[us]")
    trace = Trace(
        mote_id=np.array([r.mote_id for r in rows], dtype=np.int64),
        epoch=np.array([r.epoch for r in rows], dtype=np.int64),
        stamp=stamps,
        values=np.array([r.values for r in rows], dtype=np.float64),
        locations=dict(sorted(locations.items())),
        stats=LoadStats(rejected, unlocated, duplicates),
    )
    if unlocated:
        log.warning("dropped %d readings from motes without a location", unlocated)
    if duplicates:
        log.info("dropped %d duplicate (mote_id, epoch) readings", duplicates)
    return trace


def load_trace(readings_path: str | Path, locations_path: str | Path,
               max_rows: int | None = None) -> Trace:
    locations = load_locations(locations_path)
    rejected = 0

    def parsed(fh) -> Iterator[SensorReading]:
        nonlocal rejected
        for n, line in enumerate(fh):
            if max_rows is not None and n >= max_rows:
                break
            r = parse_reading_line(line)
            if r is None:
                rejected += 1
            else:
                yield r

    try:
        with open(readings_path, encoding="utf-8", errors="replace") as fh:
            readings = list(parsed(fh))
    except OSError as exc:
        raise TraceIOError(f"cannot read {readings_path}: {exc}",
                           path=str(readings_path)) from exc
    if rejected:
        log.info("rejected %d malformed lines in %s", rejected, readings_path)
    return from_readings(readings, locations, rejected)


def write_trace(trace: Trace, path: str | Path) -> None:
    """Export in the trace-file format (round-trips through load_trace)."""
    stamps = trace.stamp.astype(dt.datetime)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(trace)):
            fh.write(format_line(stamps[i], int(trace.epoch[i]),
                                 int(trace.mote_id[i]), trace.values[i]) + "\n")


def write_locations(locations: dict[int, MoteLocation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for loc in sorted(locations.values(), key=lambda l: l.mote_id):
            fh.write(f"{loc.mote_id} {float(loc.x)!r} {float(loc.y)!r}\n")


# (mean, slow amplitude, fast amplitude, drift over the run, jitter sd)
_SYNTH_PROFILE = {
    "temperature": (20.0, 3.0, 1.5, 2.0, 0.05),
    "humidity": (40.0, 5.0, 2.0, -3.0, 0.2),
    "light": (300.0, 150.0, 40.0, 0.0, 5.0),
    "voltage": (2.7, 0.02, 0.005, -0.1, 0.002),
}
_SLOW_PERIOD, _FAST_PERIOD = 240.0, 47.0


def synthesize_trace(n_nodes: int, n_epochs: int, grid_spacing: float = 5.0,
                     seed: int = 0, jitter: float = 1.0) -> Trace:
    """Grid of nodes observing a shared sinusoid-plus-drift signal.

    Each attribute is ``mean + slow + fast sinusoid + linear drift`` shared
    by all nodes, plus independent Gaussian jitter scaled by ``jitter``
    (0 makes every node emit the identical series).
    """
    if n_nodes < 2:
        raise InvalidArgument("n_nodes must be >= 2")
    if n_epochs < WINDOW:
        raise InvalidArgument(f"n_epochs must be >= {WINDOW}")
    if jitter < 0 or grid_spacing <= 0:
        raise InvalidArgument("jitter must be >= 0 and grid_spacing > 0")
    rng = np.random.default_rng(seed)
    cols = math.ceil(math.sqrt(n_nodes))
    locations = {
        i + 1: MoteLocation(i + 1, float((i % cols) * grid_spacing),
                            float((i // cols) * grid_spacing))
        for i in range(n_nodes)
    }
    t = np.arange(n_epochs, dtype=np.float64)
    base = np.empty((n_epochs, len(ATTRIBUTES)))
    for j, name in enumerate(ATTRIBUTES):
        mean, slow, fast, drift, _ = _SYNTH_PROFILE[name]
        phase = rng.uniform(0, 2 * np.pi, size=2)
        base[:, j] = (mean + slow * np.sin(2 * np.pi * t / _SLOW_PERIOD + phase[0])
                      + fast * np.sin(2 * np.pi * t / _FAST_PERIOD + phase[1])
                      + drift * t / n_epochs)
    sd = np.array([_SYNTH_PROFILE[a][4] for a in ATTRIBUTES]) * jitter
    noise = rng.standard_normal((n_nodes, n_epochs, len(ATTRIBUTES))) * sd
    values = (base[None, :, :] + noise).reshape(-1, len(ATTRIBUTES))
    light = ATTRIBUTES.index("light")
    values[:, light] = np.maximum(values[:, light], 0.0)

    epochs = np.tile(np.arange(n_epochs, dtype=np.int64), n_nodes)
    offsets = (epochs * SAMPLE_PERIOD_S * 1_000_000).astype("timedelta64[us]")
    return Trace(
        mote_id=np.repeat(np.arange(1, n_nodes + 1, dtype=np.int64), n_epochs),
        epoch=epochs,
        stamp=np.datetime64(_SYNTH_START, "us") + offsets,
        values=values,
        locations=locations,
    )
