"""Global (Morris elementary effects) and one-at-a-time sensitivity analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from housing_abm.rng import substream

log = logging.getLogger(__name__)


class ObjectiveFailure(RuntimeError):
    """Raised by an objective that cannot produce a value for a point."""


#: upper edges of the sigma / mu* bands and their labels
CLASS_BANDS = ((0.1, "linear"), (0.5, "monotonic"), (1.0, "almost monotonic"))


def classify(mu_star: float, sigma: float) -> str:
    """Label a factor by its ratio ``sigma / mu*``."""
    if mu_star == 0:
        return "non-influential" if sigma == 0 else "non-monotonic"
    ratio = sigma / mu_star
    for edge, label in CLASS_BANDS:
        if ratio < edge:
            return label
    return "non-monotonic"


@dataclass(frozen=True)
class MorrisDesign:
    """``r`` trajectories on a ``p``-level grid over ``bounds``."""

    bounds: tuple[tuple[float, float], ...]
    names: tuple[str, ...]
    r: int = 20
    p: int = 10

    def __post_init__(self):
        if self.p < 2 or self.p % 2:
            raise ValueError("p must be an even integer >= 2")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if len(self.bounds) != len(self.names):
            raise ValueError("bounds and names differ in length")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise ValueError("each bound needs hi > lo")

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def delta(self) -> float:
        return self.p / (2.0 * (self.p - 1))

    def trajectories(self, rng: np.random.Generator) -> np.ndarray:
        """Unit-cube trajectories, shape ``(r, k + 1, k)``.

        Consecutive rows differ in exactly one coordinate, by ``+-delta``.
        """
        k, p, d = self.k, self.p, self.delta
        B = np.tril(np.ones((k + 1, k)), -1)
        J = np.ones((k + 1, k))
        out = np.empty((self.r, k + 1, k))
        start_levels = np.arange(p // 2) / (p - 1)
        for i in range(self.r):
            x0 = rng.choice(start_levels, size=k)
            D = np.diag(rng.choice([-1.0, 1.0], size=k))
            P = np.eye(k)[rng.permutation(k)]
            out[i] = (J * x0 + 0.5 * d * ((2 * B - J) @ D + J)) @ P
        return out

    def scale(self, unit: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + unit * (hi - lo)


@dataclass
class MorrisResult:
    names: tuple[str, ...]
    mu_star: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    mu_star_ci: np.ndarray
    effects: list[np.ndarray]
    n_failed: int = 0
    design: MorrisDesign | None = None

    def classification(self) -> dict[str, str]:
        return {n: classify(float(m), float(s)) for n, m, s in zip(self.names, self.mu_star, self.sigma)}

    def rows(self) -> list[dict]:
        cls = self.classification()
        return [
            {"parameter": n, "mu_star": float(self.mu_star[i]), "mu": float(self.mu[i]),
             "sigma": float(self.sigma[i]), "mu_star_ci": float(self.mu_star_ci[i]),
             "n_effects": int(self.effects[i].size), "class": cls[n]}
            for i, n in enumerate(self.names)
        ]


def morris_screen(objective: Callable[[np.ndarray], float], design: MorrisDesign, seed: int = 0,
                  n_boot: int = 1000) -> MorrisResult:
    """Elementary-effect statistics of ``objective`` over ``design``.

    ``objective`` maps a parameter vector in the original scale to a scalar.
    Elementary effects are measured per unit of the normalised scale. A
    trajectory in which any point raises :class:`ObjectiveFailure` is dropped.
    ``mu_star_ci`` is the half-width of a 95% bootstrap interval on ``mu*``.
    """
    rng = substream(seed, "morris")
    traj = design.trajectories(rng)
    k = design.k
    effects: list[list[float]] = [[] for _ in range(k)]
    failed = 0
    for unit in traj:
        try:
            y = np.array([float(objective(x)) for x in design.scale(unit)])
        except ObjectiveFailure as exc:
            log.warning("trajectory dropped: %s", exc)
            failed += 1
            continue
        step = np.diff(unit, axis=0)
        for j in range(k):
            i = int(np.flatnonzero(step[j])[0])
            effects[i].append((y[j + 1] - y[j]) / step[j, i])
    ee = [np.asarray(e) for e in effects]
    if any(e.size == 0 for e in ee):
        raise ObjectiveFailure("every trajectory failed")
    mu_star = np.array([np.abs(e).mean() for e in ee])
    mu = np.array([e.mean() for e in ee])
    sigma = np.array([e.std(ddof=1) if e.size > 1 else 0.0 for e in ee])
    brng = substream(seed, "morris-bootstrap")
    ci = np.empty(k)
    for i, e in enumerate(ee):
        idx = brng.integers(0, e.size, (n_boot, e.size))
        boot = np.abs(e[idx]).mean(axis=1)
        lo, hi = np.percentile(boot, [2.5, 97.5])
        ci[i] = 0.5 * (hi - lo)
    return MorrisResult(design.names, mu_star, mu, sigma, ci, ee, failed, design)


# --------------------------------------------------------------------------
# one-at-a-time sweeps


@dataclass(frozen=True)
class SweepPoint:
    parameter: str
    value: float
    output: object


def sweep_values(center: float, mode: str, width: float = 0.2, n_points: int = 9,
                 bounds: tuple[float, float] | None = None, integer: bool = False) -> np.ndarray:
    """Evaluation points for one parameter.

    ``pm20`` spans ``center * (1 +- width)`` in ``n_points`` steps; ``levels100``
    spans ``bounds`` in ``n_points`` steps. Integer parameters are rounded and
    de-duplicated.
    """
    if mode == "pm20":
        if width == 0:
            vals = np.array([center], dtype=float)
        else:
            vals = center * (1.0 + np.linspace(-width, width, n_points))
    elif mode == "levels100":
        if bounds is None:
            raise ValueError("levels mode needs bounds")
        vals = np.linspace(bounds[0], bounds[1], n_points)
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    if integer:
        vals = np.unique(np.round(vals)).astype(float)
    return vals


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)

    def by_parameter(self) -> dict[str, list[SweepPoint]]:
        out: dict[str, list[SweepPoint]] = {}
        for pt in self.points:
            out.setdefault(pt.parameter, []).append(pt)
        return out


def oat_sweep(objective: Callable[[dict], object], center: dict[str, float], names: Sequence[str] | None = None,
              mode: str = "pm20", width: float = 0.2, n_points: int | None = None,
              bounds: dict[str, tuple[float, float]] | None = None) -> SweepResult:
    """Vary each named parameter alone, others held at ``center``.

    ``pm20`` mode (default 9 points) scales the centre value by ``1 +- width``;
    ``levels100`` mode (default 100 points) spans ``bounds``. With ``width == 0``
    the centre is evaluated once.
    """
    names = list(center) if names is None else list(names)
    n = n_points or (9 if mode == "pm20" else 100)
    res = SweepResult()
    if mode == "pm20" and width == 0:
        res.points.append(SweepPoint("center", float("nan"), objective(dict(center))))
        return res
    for name in names:
        c = center[name]
        vals = sweep_values(c, mode, width, n, (bounds or {}).get(name), isinstance(c, (int, np.integer))
                            and not isinstance(c, bool))
        for v in vals:
            point = dict(center)
            point[name] = int(v) if isinstance(c, (int, np.integer)) else float(v)
            res.points.append(SweepPoint(name, float(v), objective(point)))
    return res
