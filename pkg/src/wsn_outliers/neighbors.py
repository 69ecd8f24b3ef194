"""Neighbor search and adaptive-entropy best-neighbor selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientData, InvalidArgument, NoCandidates
from .ingest import WINDOW, MoteLocation, Trace

DEFAULT_K = 4
CANDIDATE_RANGE = tuple(range(1, 11))
# penalty per neighbor on the normalized prediction error
COST_PER_NEIGHBOR = 0.02
DEGENERATE_MEAN = 1e-9
ENTROPY_MODES = ("sum", "max")


@dataclass
class NeighborTable:
    """Per-node candidate list of ``(neighbor_id, distance_m)``, nearest first."""

    entries: dict[int, list[tuple[int, float]]] = field(default_factory=dict)

    def neighbors(self, node: int) -> list[int]:
        return [n for n, _ in self.entries[node]]

    def __contains__(self, node: int) -> bool:
        return node in self.entries

    def to_text(self) -> str:
        return "".join(f"{node}: {' '.join(str(n) for n in self.neighbors(node))}\n"
                       for node in sorted(self.entries))

    @classmethod
    def from_text(cls, text: str,
                  locations: Mapping[int, MoteLocation] | None = None) -> "NeighborTable":
        """Parse ``node: n1 n2 ...`` lines; distances come from ``locations`` if given."""
        entries = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, _, rest = line.partition(":")
            node = int(head)
            ids = [int(tok) for tok in rest.split()]
            entries[node] = [(n, _distance(locations, node, n)) for n in ids]
        return cls(entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path,
             locations: Mapping[int, MoteLocation] | None = None) -> "NeighborTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), locations)


def _distance(locations, a: int, b: int) -> float:
    if not locations or a not in locations or b not in locations:
        return math.nan
    la, lb = locations[a], locations[b]
    return math.hypot(la.x - lb.x, la.y - lb.y)


@dataclass(frozen=True)
class HistoryWindow:
    node_id: int
    attribute: str
    values: tuple[float, ...]  # most recent first
    end_epoch: int

    def __post_init__(self):
        if len(self.values) != WINDOW:
            raise InvalidArgument(f"window must hold exactly {WINDOW} values")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidArgument("window values must be finite")


@dataclass(frozen=True)
class EntropyScore:
    neighbor_id: int
    bin_counts: tuple[int, int, int, int]
    entropy: float


def k_nearest_by_distance(locations: Mapping[int, MoteLocation] | Iterable[MoteLocation],
                          k: int) -> NeighborTable:
    if not isinstance(locations, Mapping):
        locations = {loc.mote_id: loc for loc in locations}
    ids = sorted(locations)
    if len(ids) < 2:
        raise InvalidArgument("need at least two locations")
    if not 1 <= k <= len(ids) - 1:
        raise InvalidArgument(f"k must lie in 1..{len(ids) - 1}, got {k}")
    xy = np.array([(locations[i].x, locations[i].y) for i in ids])
    dist = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    entries = {}
    for a, node in enumerate(ids):
        # ids are ascending, so a stable sort breaks distance ties by lower id
        order = [b for b in np.argsort(dist[a], kind="stable") if b != a][:k]
        entries[node] = [(ids[b], float(dist[a, b])) for b in order]
    return NeighborTable(entries)


def _node_epoch_grid(trace: Trace, attribute: str):
    """Dense (node x epoch) matrix of one attribute, NaN where unobserved."""
    nodes = np.array(trace.node_ids)
    epochs = np.unique(trace.epoch)
    grid = np.full((len(nodes), len(epochs)), np.nan)
    grid[np.searchsorted(nodes, trace.mote_id),
         np.searchsorted(epochs, trace.epoch)] = trace.column(attribute)
    return nodes, epochs, grid


def neighbor_errors(trace: Trace, candidates: Sequence[int] = CANDIDATE_RANGE,
                    trials: int = 2000, seed: int = 0,
                    attribute: str = "temperature") -> dict[int, float]:
    """Mean |reading - mean of k nearest neighbors' readings| per candidate k.

    All candidates share the same ``trials`` random (node, epoch) draws.
    Neighbors without a reading at the drawn epoch are left out of the mean.
    """
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    nodes, _, grid = _node_epoch_grid(trace, attribute)
    if len(nodes) < 2:
        raise InsufficientData("need readings from at least two nodes")
    locs = {n: trace.locations[n] for n in nodes.tolist()}
    usable = sorted(k for k in candidates if 1 <= k <= len(nodes) - 1)
    if not usable:
        raise InvalidArgument("no candidate k fits the number of nodes")
    table = k_nearest_by_distance(locs, max(usable))
    row_of = {int(n): i for i, n in enumerate(nodes)}
    nbr_rows = np.array([[row_of[m] for m in table.neighbors(int(n))] for n in nodes])

    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(trace), size=trials)
    rows = np.array([row_of[int(m)] for m in trace.mote_id[draws]])
    cols = np.searchsorted(np.unique(trace.epoch), trace.epoch[draws])
    own = grid[rows, cols]
    nbr = grid[nbr_rows[rows], cols[:, None]]  # (trials, k_max), nearest first

    errors = {}
    for k in usable:
        seen = ~np.isnan(nbr[:, :k])
        n_seen = seen.sum(axis=1)
        ok = n_seen > 0
        if not ok.any():
            continue
        est = np.where(seen, nbr[:, :k], 0.0).sum(axis=1)[ok] / n_seen[ok]
        errors[k] = float(np.mean(np.abs(own[ok] - est)))
    if not errors:
        raise InsufficientData("no sampled epoch has co-observing neighbors")
    return errors


def monte_carlo_neighbor_count(trace: Trace, candidates: Sequence[int] = CANDIDATE_RANGE,
                               trials: int = 2000, seed: int = 0,
                               attribute: str = "temperature",
                               cost_per_neighbor: float = COST_PER_NEIGHBOR) -> int:
    """Pick the neighbor count minimizing normalized error plus a per-neighbor cost.

    The error of each k is divided by the largest error among the candidates
    so the cost term is unit-free; ties go to the smaller k.
    """
    errors = neighbor_errors(trace, candidates, trials, seed, attribute)
    worst = max(errors.values()) or 1.0
    scores = {k: e / worst + cost_per_neighbor * k for k, e in errors.items()}
    return min(scores, key=lambda k: (scores[k], k))


def deviation_bins(values) -> np.ndarray:
    """Counts (a0, a1, a2, a3) of relative deviations from the window mean.

    Works on the last axis, so a stack of windows gives a stack of counts.
    Bins: e <= -0.5, -0.5 < e <= 0, 0 < e <= 0.5, e > 0.5. When the mean is
    ~0 the absolute deviation is binned instead.
    """
    if isinstance(values, HistoryWindow):
        values = values.values
    d = np.asarray(values, dtype=np.float64)
    mean = d.mean(axis=-1, keepdims=True)
    tiny = np.abs(mean) < DEGENERATE_MEAN
    e = np.where(tiny, d - mean, (d - mean) / np.where(tiny, 1.0, mean))
    idx = np.searchsorted([-0.5, 0.0, 0.5], e, side="left")
    return np.stack([(idx == j).sum(axis=-1) for j in range(4)], axis=-1)


def entropy_weight(bin_counts, mode: str = "sum") -> np.ndarray | float:
    """Shannon entropy (nats) of the bin counts, with 0 ln 0 = 0.

    ``mode="max"`` returns the largest single ``-p ln p`` term instead of
    their sum.
    """
    if mode not in ENTROPY_MODES:
        raise InvalidArgument(f"mode must be one of {ENTROPY_MODES}")
    a = np.asarray(bin_counts, dtype=np.float64)
    if np.any(a < 0):
        raise InvalidArgument("bin counts must be non-negative")
    s = a.sum(axis=-1, keepdims=True)
    if np.any(s == 0):
        raise InvalidArgument("bin counts must not all be zero")
    p = a / s
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    out = terms.sum(axis=-1) if mode == "sum" else terms.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def score_windows(windows: np.ndarray, mode: str = "sum") -> np.ndarray:
    """Entropy weight of every window along the last axis."""
    return entropy_weight(deviation_bins(windows), mode)


def best_candidate(windows: np.ndarray, mode: str = "sum") -> np.ndarray:
    """Index of the winning candidate for stacked windows ``(n_cand, ..., W)``.

    Candidates must already be ordered nearest first: ``argmax`` keeps the
    first maximum, which is both the distance tie-break and the
    all-zero fallback to the nearest neighbor.
    """
    return np.asarray(np.argmax(score_windows(windows, mode), axis=0))


def select_best_neighbor(windows: Sequence[HistoryWindow],
                         distances: Mapping[int, float] | None = None,
                         mode: str = "sum") -> int:
    if not windows:
        raise NoCandidates("no candidate windows")
    if len(windows) > len(CANDIDATE_RANGE):
        raise InvalidArgument(f"at most {len(CANDIDATE_RANGE)} candidates")
    distances = distances or {}
    ordered = sorted(windows, key=lambda w: (distances.get(w.node_id, math.inf),
                                             w.node_id))
    stacked = np.array([w.values for w in ordered], dtype=np.float64)
    return ordered[int(best_candidate(stacked, mode))].node_id


def entropy_scores(windows: Sequence[HistoryWindow], mode: str = "sum") -> list[EntropyScore]:
    out = []
    for w in windows:
        counts = deviation_bins(w.values)
        out.append(EntropyScore(w.node_id, tuple(int(c) for c in counts),
                                entropy_weight(counts, mode)))
    return out
