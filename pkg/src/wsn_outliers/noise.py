"""Labeled Gaussian outlier injection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .ingest import Trace

ALL_ATTRIBUTES = "all"


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 5.0
    fraction: float = 0.10
    attribute: str = "temperature"
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidArgument(f"sigma must be finite and >= 0, got {self.sigma}")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidArgument(f"fraction must lie in [0, 1], got {self.fraction}")


@dataclass(eq=False)
class LabeledTrace:
    """A corrupted trace, its 0/1 labels, and the untouched original.

    ``clean`` is kept so feature extraction can read uncorrupted history.
    """

    trace: Trace
    labels: np.ndarray
    clean: Trace

    @property
    def n_outliers(self) -> int:
        return int(self.labels.sum())


def outlier_count(n: int, fraction: float) -> int:
    # round half up; Python's round() is banker's rounding
    return int(math.floor(fraction * n + 0.5))


def inject_noise(trace: Trace, spec: NoiseSpec) -> LabeledTrace:
    """Add N(0, sigma^2) to exactly ``round(fraction * N)`` random readings."""
    n = len(trace)
    if n == 0:
        raise InvalidArgument("cannot inject noise into an empty trace")
    if spec.attribute == ALL_ATTRIBUTES:
        cols = list(range(len(trace.attribute_names)))
    else:
        cols = [trace.attribute_index(spec.attribute)]

    rng = np.random.default_rng(spec.seed)
    chosen = rng.permutation(n)[: outlier_count(n, spec.fraction)]
    chosen.sort()
    noise = rng.normal(0.0, 1.0, size=(len(chosen), len(cols))) * spec.sigma

    values = trace.values.copy()
    values[np.ix_(chosen, cols)] += noise
    labels = np.zeros(n, dtype=np.int8)
    labels[chosen] = 1
    return LabeledTrace(trace.with_values(values), labels, trace)
