"""Post-hoc analytics over simulated ensembles.

Coverage of an observed series by ensemble bands, per-area end-of-period
regressions, and population-scaled mobility heatmaps per mover kind.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from housing_abm.trace import MoverKind, SimulationTrace


class LengthMismatch(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


class EmptyLog(UserWarning):
    pass


# --------------------------------------------------------------------------
# coverage


def _fractions(actual, lo, hi, mean, std) -> dict[str, float]:
    ok = np.isfinite(actual)
    if not ok.any():
        return {"minmax": float("nan"), "sigma1": float("nan"), "sigma2": float("nan"), "months": 0}
    a = actual[ok]
    inside = lambda l, h: float(np.mean((a >= l[ok]) & (a <= h[ok])))  # noqa: E731
    return {
        "minmax": inside(lo, hi),
        "sigma1": inside(mean - std, mean + std),
        "sigma2": inside(mean - 2 * std, mean + 2 * std),
        "months": int(ok.sum()),
    }


@dataclass
class CoverageReport:
    """Fractions of observed months inside each ensemble band.

    ``overall`` covers every recorded month; ``periods`` holds the same
    fractions per named sub-period when a split is given.
    """

    minmax: float
    sigma1: float
    sigma2: float
    months: int
    periods: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"minmax": self.minmax, "sigma1": self.sigma1, "sigma2": self.sigma2,
                "months": self.months, "periods": self.periods}


def band_summary(runs: np.ndarray) -> dict[str, np.ndarray]:
    """Per-month min, max, mean, std and median of a ``(runs, months)`` array."""
    x = np.asarray(runs, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {
            "min": np.nanmin(x, axis=0), "max": np.nanmax(x, axis=0), "mean": np.nanmean(x, axis=0),
            "std": np.nanstd(x, axis=0), "median": np.nanmedian(x, axis=0),
        }


def coverage(summary: dict[str, np.ndarray], actual, split: int | None = None) -> CoverageReport:
    """Coverage of ``actual`` by the bands in ``summary`` (see :func:`band_summary`)."""
    a = np.asarray(actual, dtype=float)
    lo, hi = np.asarray(summary["min"], float), np.asarray(summary["max"], float)
    mean, std = np.asarray(summary["mean"], float), np.asarray(summary["std"], float)
    if not (a.shape == lo.shape == hi.shape == mean.shape == std.shape):
        raise LengthMismatch(f"actual has {a.shape}, ensemble has {lo.shape}")
    whole = _fractions(a, lo, hi, mean, std)
    periods = {}
    if split is not None:
        if not 0 < split < a.size:
            raise LengthMismatch(f"split {split} outside the series")
        s = slice(0, split)
        periods["train"] = _fractions(a[s], lo[s], hi[s], mean[s], std[s])
        s = slice(split, None)
        periods["test"] = _fractions(a[s], lo[s], hi[s], mean[s], std[s])
    return CoverageReport(whole["minmax"], whole["sigma1"], whole["sigma2"], whole["months"], periods)


# --------------------------------------------------------------------------
# area regression


@dataclass
class AreaForecast:
    predicted: np.ndarray
    predicted_std: np.ndarray
    actual: np.ndarray
    slope: float
    intercept: float
    r2: float

    def to_json(self, names=None) -> dict:
        names = list(names) if names is not None else [str(i) for i in range(self.actual.size)]
        return {
            "slope": self.slope, "intercept": self.intercept, "r2": self.r2,
            "areas": [{"area": n, "actual": float(a), "predicted": float(p), "std": float(s)}
                      for n, a, p, s in zip(names, self.actual, self.predicted, self.predicted_std)],
        }


def area_regression(predicted_runs, actual) -> AreaForecast:
    """Least-squares fit of the cross-run mean prediction on the actual values.

    ``predicted_runs`` is ``(runs, areas)`` (or ``(areas,)`` for one run).
    """
    p = np.atleast_2d(np.asarray(predicted_runs, dtype=float))
    a = np.asarray(actual, dtype=float)
    if p.shape[1] != a.size:
        raise LengthMismatch(f"{p.shape[1]} predicted areas vs {a.size} actual")
    if a.size < 2:
        raise DegenerateVariance("need at least two areas")
    pred = np.mean(p, axis=0)
    std = np.std(p, axis=0)
    ok = np.isfinite(pred) & np.isfinite(a)
    x, y = a[ok], pred[ok]
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateVariance("actual values have no variance")
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else float("-inf"))
    return AreaForecast(pred, std, a, slope, intercept, r2)


# --------------------------------------------------------------------------
# mobility


@dataclass
class MobilityHeatmap:
    """Population-scaled movement shares, areas ordered by ascending median price.

    ``matrix`` is origin x destination for first-time buyers and a destination
    vector otherwise. ``order`` maps positions to area indices.
    """

    kind: MoverKind
    matrix: np.ndarray
    order: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def destination_share(self) -> np.ndarray:
        return self.matrix.sum(axis=0) if self.matrix.ndim == 2 else self.matrix

    def to_csv_text(self) -> str:
        labels = [self.names[i] if self.names else str(i) for i in self.order]
        if self.matrix.ndim == 1:
            rows = ["area,share"] + [f"{n},{v!r}" for n, v in zip(labels, self.matrix.tolist())]
        else:
            rows = ["origin," + ",".join(labels)]
            rows += [n + "," + ",".join(repr(v) for v in r) for n, r in zip(labels, self.matrix.tolist())]
        return "\n".join(rows) + "\n"


def mobility_heatmap(moves: np.ndarray, population: np.ndarray, median_prices, kind: MoverKind,
                     months: np.ndarray | None = None) -> MobilityHeatmap:
    """Shares of ``kind`` movements per destination (and origin for first-time buyers).

    Each movement counts ``1 / population`` of its destination, where
    ``population`` is ``(areas,)`` or ``(len(months), areas)`` resident counts
    looked up at the movement month. The result sums to one.
    """
    kind = MoverKind(kind)
    prices = np.asarray(median_prices, dtype=float)
    n = prices.size
    order = np.lexsort((np.arange(n), np.where(np.isfinite(prices), prices, np.inf)))
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    two_d = kind == MoverKind.FIRST_TIME_BUYER
    out = np.zeros((n, n) if two_d else n)
    sel = moves[moves["kind"] == int(kind)]
    pop = np.asarray(population, dtype=float)
    if pop.ndim == 1:
        dest_pop = pop[sel["to_area"]]
    else:
        if months is None:
            raise ValueError("a per-month population needs the months array")
        row = np.searchsorted(np.asarray(months), sel["month"])
        row = np.clip(row, 0, pop.shape[0] - 1)
        dest_pop = pop[row, sel["to_area"]]
    w = np.where(dest_pop > 0, 1.0 / np.maximum(dest_pop, 1e-300), 0.0)
    if two_d:
        org = sel["from_area"]
        keep = org >= 0
        np.add.at(out, (pos[org[keep]], pos[sel["to_area"][keep]]), w[keep])
    else:
        np.add.at(out, pos[sel["to_area"]], w)
    total = out.sum()
    if total <= 0:
        warnings.warn(f"no {kind.name} movements to map", EmptyLog)
        return MobilityHeatmap(kind, out, order)
    return MobilityHeatmap(kind, out / total, order)


def mobility_from_trace(trace: SimulationTrace, kind: MoverKind) -> MobilityHeatmap:
    """Heatmap from a trace, ordered by the final month's area medians."""
    hm = mobility_heatmap(trace.moves, trace.area_households, trace.area_median[-1], kind, trace.month)
    hm.names = trace.area_names
    return hm


def smooth_shares(shares, window: int = 3) -> np.ndarray:
    """Centred moving average; windows shrink at the ends."""
    x = np.asarray(shares, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    lo = np.clip(np.arange(x.size) - half, 0, x.size)
    hi = np.clip(np.arange(x.size) + half + 1, 0, x.size)
    return (c[hi] - c[lo]) / (hi - lo)


def affordability_curve(heatmap: MobilityHeatmap, window: int = 3) -> np.ndarray:
    """Smoothed destination shares along the price ranking, cheapest first."""
    return smooth_shares(heatmap.destination_share, window)
