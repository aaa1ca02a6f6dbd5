"""Trajectory error metrics and per-cell aggregation over seeds."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import AggregationError, DimensionError, UndefinedMetricError

CELL_KEYS = ("scenario", "proposal", "N", "M", "T", "K", "metric")


def _pair(estimates, reference):
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    if est.shape != ref.shape:
        raise DimensionError(f"estimate shape {est.shape} differs from reference {ref.shape}")
    return est, ref


def nmse(estimates, reference) -> float:
    """``sum_t ||xhat_t - x_t||^2 / sum_t ||x_t||^2``."""
    est, ref = _pair(estimates, reference)
    energy = float(np.sum(ref * ref))
    if energy == 0.0:
        raise UndefinedMetricError("NMSE is undefined for a zero-energy reference")
    return float(np.sum((est - ref) ** 2)) / energy


def mse(estimates, reference) -> np.ndarray:
    """Per-component mean over time of the squared error."""
    est, ref = _pair(estimates, reference)
    return np.mean((est - ref) ** 2, axis=0)


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    proposal: str
    N: int
    M: int
    T: int
    K: int
    seed: int
    metric: str
    value: float
    failed: bool = False


@dataclass(frozen=True)
class AggregateRow:
    scenario: str
    proposal: str
    N: int
    M: int
    T: int
    K: int
    metric: str
    median: float
    std: float
    count: int
    failed: int


def aggregate(rows) -> list[AggregateRow]:
    """Median and population standard deviation of successful trials per cell.

    Cells keep first-appearance order.  A cell whose trials all failed
    reports NaN statistics; a call with no rows at all is an error.
    """
    rows = list(rows)
    if not rows:
        raise AggregationError("cannot aggregate an empty set of rows")
    cells: "OrderedDict[tuple, list]" = OrderedDict()
    for r in rows:
        cells.setdefault(tuple(getattr(r, k) for k in CELL_KEYS), []).append(r)
    out = []
    for key, members in cells.items():
        values = np.array([r.value for r in members if not r.failed], dtype=float)
        n_failed = sum(1 for r in members if r.failed)
        if values.size:
            med, std = float(np.median(values)), float(np.std(values))
        else:
            med = std = float("nan")
        out.append(AggregateRow(*key, median=med, std=std, count=int(values.size), failed=n_failed))
    return out
