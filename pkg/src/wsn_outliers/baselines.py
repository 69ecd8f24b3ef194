"""k-nearest-neighbors and Gaussian naive Bayes reference classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, InvalidArgument
from .features import FeatureMatrix

DEFAULT_K = 5
VARIANCE_FLOOR = 1e-9
_CHUNK = 64


def _xy(data) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(data, FeatureMatrix):
        return np.asarray(data.X, dtype=np.float64), np.asarray(data.y, dtype=np.int64)
    return np.atleast_2d(np.asarray(data, dtype=np.float64)), None


@dataclass
class KnnModel:
    X: np.ndarray  # normalized training rows
    y: np.ndarray
    k: int
    lo: np.ndarray
    span: np.ndarray

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.lo) / self.span

    def predict(self, rows) -> np.ndarray:
        Q = self.normalize(_xy(rows)[0])
        out = np.empty(len(Q), dtype=np.int8)
        for start in range(0, len(Q), _CHUNK):
            q = Q[start:start + _CHUNK]
            d2 = ((q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            votes = self.y[self._nearest(d2)].sum(axis=1)
            out[start:start + _CHUNK] = 2 * votes > self.k
        return out

    def _nearest(self, d2: np.ndarray) -> np.ndarray:
        k = self.k
        if k >= d2.shape[1]:
            return np.argsort(d2, axis=1, kind="stable")[:, :k]
        nearest = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(d2, nearest, axis=1).max(axis=1)
        # rows with a distance tie at the boundary: lower training index wins
        tied = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > k)
        if len(tied):
            nearest[tied] = np.argsort(d2[tied], axis=1, kind="stable")[:, :k]
        return nearest


def knn_fit(train: FeatureMatrix, k: int = DEFAULT_K) -> KnnModel:
    X, y = _xy(train)
    if len(X) == 0:
        raise InvalidArgument("empty training set")
    if k < 1 or k % 2 == 0 or k > len(X):
        raise InvalidArgument(f"k must be odd and in 1..{len(X)}, got {k}")
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return KnnModel((X - lo) / span, y, k, lo, span)


def knn_fit_predict(train: FeatureMatrix, test, k: int = DEFAULT_K) -> np.ndarray:
    return knn_fit(train, k).predict(test)


@dataclass
class NbModel:
    prior: np.ndarray  # (2,)
    mean: np.ndarray  # (2, n_features)
    var: np.ndarray

    def log_posterior(self, rows) -> np.ndarray:
        """Unnormalized log posterior per class, shape ``(n, 2)``."""
        X = _xy(rows)[0]
        diff = X[:, None, :] - self.mean[None, :, :]
        ll = -0.5 * (np.log(2 * np.pi * self.var)[None] + diff ** 2 / self.var[None])
        return ll.sum(axis=2) + np.log(self.prior)[None, :]

    def posterior(self, rows) -> np.ndarray:
        lp = self.log_posterior(rows)
        lp -= lp.max(axis=1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, rows) -> np.ndarray:
        lp = self.log_posterior(rows)
        return (lp[:, 1] >= lp[:, 0]).astype(np.int8)


def nb_fit(train: FeatureMatrix) -> NbModel:
    X, y = _xy(train)
    if y is None or len(np.unique(y)) < 2:
        raise DegenerateLabels("naive Bayes needs both classes in training data")
    prior = np.array([np.mean(y == c) for c in (0, 1)])
    mean = np.array([X[y == c].mean(axis=0) for c in (0, 1)])
    var = np.array([X[y == c].var(axis=0) for c in (0, 1)])
    return NbModel(prior, mean, np.maximum(var, VARIANCE_FLOOR))


def nb_fit_predict(train: FeatureMatrix, test) -> np.ndarray:
    return nb_fit(train).predict(test)
