"""Continual-learning summaries over a lower-triangular log ``a[j][k]``.

``a[j][k]`` is an error metric on dataset ``j`` after training through
dataset ``k`` (0-based here), defined for ``j <= k``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

Log = Sequence[Sequence[float | None]]


def _check(a: Log) -> int:
    t = len(a)
    for k in range(t):
        for j in range(k + 1):
            v = a[j][k]
            if v is None or not np.isfinite(v):
                raise ValueError(f"log entry a[{j}][{k}] is missing")
    return t


def average_forgetting(a: Log) -> float:
    """Mean relative increase of error on earlier datasets, in percent."""
    t = _check(a)
    if t < 2:
        return 0.0
    total = 0.0
    for k in range(t):
        for j in range(k):
            if a[j][j] == 0:
                raise ZeroDivisionError(f"a[{j}][{j}] is zero")
            total += (a[j][k] - a[j][j]) / a[j][j]
    return 100.0 * 2.0 / (t * (t - 1)) * total


def average_performance(a: Log) -> float:
    t = _check(a)
    total = sum(a[j][k] for k in range(t) for j in range(k + 1))
    return 2.0 / (t * (t + 1)) * total


def spto(a: Log) -> float:
    """Harmonic mean of final-stage (stability) and first-exposure (plasticity) error sums."""
    t = _check(a)
    s = sum(a[k][t - 1] for k in range(t))
    p = sum(a[k][k] for k in range(t))
    if s + p == 0:
        raise ZeroDivisionError("S + P is zero")
    return 2.0 * s * p / (s + p)


def summarize(a: Log) -> dict[str, float]:
    return {
        "average_forgetting": average_forgetting(a),
        "average_performance": average_performance(a),
        "spto": spto(a),
    }
