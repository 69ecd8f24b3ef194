"""Correlation features over sliding windows and the labeled feature matrix.

All correlation kernels operate on the last axis, so passing ``(n_rows, W)``
stacks computes one coefficient per row.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .errors import InsufficientHistory, InvalidArgument
from .ingest import WINDOW
from .neighbors import NeighborTable, score_windows
from .noise import LabeledTrace

log = logging.getLogger(__name__)

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "fn")
CONTEXTS = ("clean", "observed")
PAIRINGS = ("neighbor", "lagged")
# relative size below which a sum of squares counts as zero (flat window)
_FLAT = 1e-12


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InvalidArgument(f"length mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 0 or x.shape[-1] < 2:
        raise InvalidArgument("need at least two observations")
    return x, y


def _out(r: np.ndarray):
    return float(r) if r.ndim == 0 else r


def _flat(ss: np.ndarray, v: np.ndarray) -> np.ndarray:
    scale = np.abs(v).max(axis=-1)
    return ss <= v.shape[-1] * (_FLAT * scale) ** 2


def pearson(x, y):
    """Product-moment correlation, two-pass centered form; 0 for a flat input."""
    x, y = _pair(x, y)
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean(axis=-1, keepdims=True)
    ssx = (xc * xc).sum(axis=-1)
    ssy = (yc * yc).sum(axis=-1)
    ssxy = (xc * yc).sum(axis=-1)
    bad = _flat(ssx, x) | _flat(ssy, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(bad, 0.0, ssxy / np.sqrt(np.where(bad, 1.0, ssx * ssy)))
    return _out(np.clip(r, -1.0, 1.0))


def spearman(x, y):
    """Pearson correlation of average ranks (ties share their mean rank)."""
    x, y = _pair(x, y)
    return pearson(rankdata(x, axis=-1), rankdata(y, axis=-1))


def spearman_rank_difference(x, y) -> float:
    """``1 - 6 sum d^2 / (n (n^2 - 1))``; only valid without ties."""
    x, y = _pair(x, y)
    n = x.shape[-1]
    d = rankdata(x, axis=-1) - rankdata(y, axis=-1)
    return _out(1.0 - 6.0 * (d * d).sum(axis=-1) / (n * (n * n - 1)))


def _double_centered_distances(v: np.ndarray) -> np.ndarray:
    a = np.abs(v[..., :, None] - v[..., None, :])
    return (a - a.mean(axis=-1, keepdims=True) - a.mean(axis=-2, keepdims=True)
            + a.mean(axis=(-2, -1), keepdims=True))


def distance_correlation(x, y):
    """Empirical distance correlation in [0, 1]; 0 if either input is constant."""
    x, y = _pair(x, y)
    A = _double_centered_distances(x)
    B = _double_centered_distances(y)
    dcov2 = (A * B).mean(axis=(-2, -1))
    dvar2 = (A * A).mean(axis=(-2, -1)) * (B * B).mean(axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(dvar2 > 0, np.maximum(dcov2, 0.0) / np.sqrt(np.where(dvar2 > 0, dvar2, 1.0)), 0.0)
    return _out(np.clip(np.sqrt(r2), 0.0, 1.0))


def zscore_correlation(x, y):
    """Sum of products of standardized scores over ``n - 1``."""
    x, y = _pair(x, y)
    n = x.shape[-1]
    mx = x.mean(axis=-1, keepdims=True)
    my = y.mean(axis=-1, keepdims=True)
    ssx = ((x - mx) ** 2).sum(axis=-1)
    ssy = ((y - my) ** 2).sum(axis=-1)
    bad = _flat(ssx, x) | _flat(ssy, y)
    sx = np.sqrt(np.where(bad, 1.0, ssx) / (n - 1))[..., None]
    sy = np.sqrt(np.where(bad, 1.0, ssy) / (n - 1))[..., None]
    r = ((x - mx) / sx * ((y - my) / sy)).sum(axis=-1) / (n - 1)
    return _out(np.clip(np.where(bad, 0.0, r), -1.0, 1.0))


def correlation_features(x, y) -> np.ndarray:
    """Stack (f1, f2, f3, f4) along a new last axis."""
    return np.stack([np.asarray(pearson(x, y)), np.asarray(spearman(x, y)),
                     np.asarray(distance_correlation(x, y)),
                     np.asarray(zscore_correlation(x, y))], axis=-1)


@dataclass(frozen=True)
class FeatureRow:
    node_id: int
    end_epoch: int
    f1: float
    f2: float
    f3: float
    f4: float
    fn: float
    label: int


@dataclass(eq=False)
class FeatureMatrix:
    """Rows of features in node-then-epoch order.

    ``X`` columns follow ``feature_names``; ``neighbor`` holds the best
    neighbor chosen for each row (0 when unknown, e.g. after CSV import).
    """

    node: np.ndarray
    epoch: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    attribute: str = "temperature"
    neighbor: np.ndarray | None = None
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (self.feature_names == other.feature_names
                and np.array_equal(self.node, other.node)
                and np.array_equal(self.epoch, other.epoch)
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.y, other.y))

    def rows(self) -> Iterator[FeatureRow]:
        if self.feature_names != FEATURE_NAMES:
            raise InvalidArgument("FeatureRow needs the standard five features")
        for i in range(len(self)):
            yield FeatureRow(int(self.node[i]), int(self.epoch[i]),
                             *map(float, self.X[i]), int(self.y[i]))

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        nb = None if self.neighbor is None else self.neighbor[idx]
        return FeatureMatrix(self.node[idx], self.epoch[idx], self.X[idx],
                             self.y[idx], self.feature_names, self.attribute, nb)

    def with_column(self, name: str, values) -> "FeatureMatrix":
        values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        return FeatureMatrix(self.node, self.epoch, np.hstack([self.X, values]),
                             self.y, self.feature_names + (name,),
                             self.attribute, self.neighbor, self.skipped)

    def class_counts(self) -> tuple[int, int]:
        pos = int(self.y.sum())
        return len(self.y) - pos, pos

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "epoch", *self.feature_names, "label"])
            for i in range(len(self)):
                w.writerow([int(self.node[i]), int(self.epoch[i]),
                            *(repr(float(v)) for v in self.X[i]), int(self.y[i])])

    @classmethod
    def from_csv(cls, path: str | Path, attribute: str = "temperature") -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if header[:2] != ["node", "epoch"] or header[-1] != "label":
            raise InvalidArgument(f"unexpected feature CSV header {header}")
        names = tuple(header[2:-1])
        data = np.array(rows, dtype=object).reshape(len(rows), len(header))
        return cls(
            node=data[:, 0].astype(np.int64),
            epoch=data[:, 1].astype(np.int64),
            X=data[:, 2:-1].astype(np.float64).reshape(len(rows), len(names)),
            y=data[:, -1].astype(np.int8),
            feature_names=names,
            attribute=attribute,
        )


def _windows(values: np.ndarray, w: int) -> np.ndarray:
    """Row i holds values[i + w - 1], values[i + w - 2], ..., values[i]."""
    return sliding_window_view(values, w)[:, ::-1]


def _align(epochs: np.ndarray, targets: np.ndarray, w: int) -> np.ndarray:
    """Row index in ``epochs`` matching each target (exact, then -1, then +1).

    -1 where no match exists or the match has fewer than ``w - 1`` earlier rows.
    """
    out = np.full(len(targets), -1, dtype=np.int64)
    for shift in (0, -1, 1):
        want = targets + shift
        pos = np.searchsorted(epochs, want)
        pos_c = np.minimum(pos, len(epochs) - 1)
        hit = (out < 0) & (pos < len(epochs)) & (epochs[pos_c] == want) & (pos_c >= w - 1)
        out[hit] = pos_c[hit]
    return out


def build_feature_matrix(labeled: LabeledTrace, table: NeighborTable,
                         attribute: str = "temperature", window: int = WINDOW,
                         mode: str = "sum", context: str = "clean",
                         pairing: str = "neighbor") -> FeatureMatrix:
    """Feature rows for every (node, epoch) with a full window.

    ``context="clean"`` corrupts only the reading under test: the node's
    history and all neighbor data come from the uncorrupted trace.
    ``context="observed"`` reads everything from the corrupted trace.
    ``pairing="lagged"`` correlates the node's window with its own window one
    step earlier instead of with the best neighbor's window.
    """
    if context not in CONTEXTS:
        raise InvalidArgument(f"context must be one of {CONTEXTS}")
    if pairing not in PAIRINGS:
        raise InvalidArgument(f"pairing must be one of {PAIRINGS}")
    if window < 2:
        raise InvalidArgument("window must be >= 2")
    obs_trace = labeled.trace
    col = obs_trace.attribute_index(attribute)
    observed = obs_trace.values[:, col]
    clean = labeled.clean.values[:, col] if context == "clean" else observed

    parts = []
    skipped = 0
    for node in obs_trace.node_ids:
        if node not in table or not table.entries[node]:
            continue
        sl = obs_trace.node_slice(node)
        epochs = obs_trace.epoch[sl]
        if len(epochs) < window + (pairing == "lagged"):
            continue
        hist = _windows(clean[sl], window)
        x = hist.copy()
        x[:, 0] = _windows(observed[sl], window)[:, 0]
        end_epochs = epochs[window - 1:]
        labels = labeled.labels[sl][window - 1:]

        cand_ids = [n for n in table.neighbors(node) if n in obs_trace.locations]
        cand_win = np.zeros((len(cand_ids), len(end_epochs), window))
        cand_ok = np.zeros((len(cand_ids), len(end_epochs)), dtype=bool)
        for c, nb in enumerate(cand_ids):
            nsl = obs_trace.node_slice(nb)
            if nsl.stop - nsl.start < window:
                continue
            pos = _align(obs_trace.epoch[nsl], end_epochs, window)
            ok = pos >= 0
            nb_hist = _windows(clean[nsl], window)
            cand_win[c, ok] = nb_hist[pos[ok] - (window - 1)]
            cand_ok[c] = ok
        if not cand_ids:
            continue

        scores = np.where(cand_ok, score_windows(cand_win, mode), -np.inf)
        usable = cand_ok.any(axis=0)
        if pairing == "lagged":
            usable[0] = False
        skipped += int((~usable).sum())
        if not usable.any():
            continue
        best = np.argmax(scores, axis=0)
        rows = np.flatnonzero(usable)
        nb_win = cand_win[best[rows], rows]
        if pairing == "lagged":
            y = hist[rows - 1]
        else:
            y = nb_win
        feats = correlation_features(x[rows], y)
        parts.append((
            np.full(len(rows), node, dtype=np.int64),
            end_epochs[rows],
            np.column_stack([feats, nb_win[:, 0]]),
            labels[rows].astype(np.int8),
            np.asarray(cand_ids, dtype=np.int64)[best[rows]],
        ))
    if not parts:
        raise InsufficientHistory("no node has a full window with an aligned neighbor")
    if skipped:
        log.info("skipped %d rows without an aligned neighbor window", skipped)
    node, epoch, X, y, nb = (np.concatenate(p) for p in zip(*parts))
    return FeatureMatrix(node, epoch, X, y, FEATURE_NAMES, attribute, nb, skipped)
