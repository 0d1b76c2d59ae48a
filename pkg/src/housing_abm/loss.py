"""Shape and timing loss between two price series.

The shape term is exact dynamic time warping with absolute pointwise
distance. The timing term is the normalised area between the optimal warping
path and the identity path. No smoothing is applied to either.

Warping paths use 0-based index pairs ``(i, j)`` into ``(x, y)``. Steps are
``(1, 0)``, ``(1, 1)`` or ``(0, 1)``. When several paths share the optimal
cost the backtrack prefers the diagonal step, then ``(1, 0)``, then
``(0, 1)``; the timing term depends on the path, so this order is part of the
result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class EmptySeries(ValueError):
    pass


class InvalidPath(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


WarpPath = list[tuple[int, int]]


@dataclass(frozen=True)
class LossReport:
    shape: float
    temporal: float
    combined: float
    path: tuple[tuple[int, int], ...]
    lam: float = 0.5


def cost_matrix(x, y, distance: Callable | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if distance is None:
        return np.abs(x[:, None] - y[None, :])
    return np.array([[distance(a, b) for b in y] for a in x], dtype=float)


def accumulated_cost(d: np.ndarray) -> np.ndarray:
    n, m = d.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        prev = acc[i - 1]
        row = acc[i]
        di = d[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = di[j - 1] + best
    return acc


def dtw(x: Sequence[float], y: Sequence[float], distance: Callable | None = None) -> tuple[float, WarpPath]:
    """Exact DTW cost and one optimal warping path.

    Raises
    ------
    EmptySeries
        Either input is empty.
    """
    if len(x) == 0 or len(y) == 0:
        raise EmptySeries("dtw needs two non-empty series")
    acc = accumulated_cost(cost_matrix(x, y, distance))
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # candidate predecessors in tie-break order
        options = ((i - 1, j - 1), (i - 1, j), (i, j - 1))
        i, j = min(options, key=lambda ij: acc[ij])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[-1, -1]), path


def validate_path(path: Sequence[tuple[int, int]], n: int, m: int | None = None) -> None:
    m = n if m is None else m
    if not path or tuple(path[0]) != (0, 0) or tuple(path[-1]) != (n - 1, m - 1):
        raise InvalidPath("path must run from (0, 0) to (n-1, m-1)")
    for (a, b), (c, d) in zip(path, path[1:]):
        if (c - a, d - b) not in ((1, 0), (1, 1), (0, 1)):
            raise InvalidPath(f"illegal step {(a, b)} -> {(c, d)}")


def _segment_area(i0, j0, i1, j1) -> float:
    w = i1 - i0
    if w == 0:
        return 0.0
    f0, f1 = i0 - j0, i1 - j1
    if f0 * f1 >= 0:
        return w * (abs(f0) + abs(f1)) / 2.0
    return w * (f0 * f0 + f1 * f1) / (2.0 * (abs(f0) + abs(f1)))


def tdi(path: Sequence[tuple[int, int]], n: int) -> float:
    """Time distortion index of ``path`` on an ``n x n`` comparison.

    ``2 * area / n**2`` where ``area`` is the region between the piecewise
    linear path and the identity line.
    """
    validate_path(path, n)
    area = sum(_segment_area(a, b, c, d) for (a, b), (c, d) in zip(path, path[1:]))
    return 2.0 * area / (n * n)


def combined_loss(actual, simulated, lam: float = 0.5, distance: Callable | None = None) -> LossReport:
    """``lam * dtw + (1 - lam) * tdi`` on equal-length series.

    The two terms are on different scales and are not normalised; the
    timing term acts as a penalty on the shape term.
    """
    if len(actual) != len(simulated):
        raise LengthMismatch(f"{len(actual)} != {len(simulated)}")
    shape, path = dtw(actual, simulated, distance)
    temporal = tdi(path, len(actual))
    return LossReport(shape, temporal, lam * shape + (1.0 - lam) * temporal, tuple(path), lam)
