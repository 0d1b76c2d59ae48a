"""Calibration of the behavioural parameters against an observed price series.

The search is a Tree-structured Parzen Estimator: after a random start, each
proposal is the best of a batch of candidates drawn from a density over good
trials, scored by the ratio of good to bad density. Dimensions are modelled
independently with truncated Gaussian mixtures.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr
from scipy.stats import truncnorm

from housing_abm.behavior import BehaviorConstants, ParameterVector
from housing_abm.engine import run
from housing_abm.loss import combined_loss
from housing_abm.rng import derive_seed, substream
from housing_abm.scenario import Scenario

PARAM_NAMES = ("h", "beta", "alpha")
SEARCH_SPACE = {k: ParameterVector.BOUNDS[k] for k in PARAM_NAMES}


class DegenerateSplit(ValueError):
    pass


class NoSurvivingTrial(UserWarning):
    pass


def train_test_split(series, ratio: float):
    """Contiguous split at ``floor(ratio * n)``."""
    if not 0.0 < ratio < 1.0:
        raise DegenerateSplit(f"ratio {ratio} outside (0, 1)")
    x = np.asarray(series)
    k = int(math.floor(ratio * x.shape[0] + 1e-9))
    if k <= 0 or k >= x.shape[0]:
        raise DegenerateSplit(f"split of {x.shape[0]} points at {ratio} leaves an empty side")
    return x[:k], x[k:]


# --------------------------------------------------------------------------
# TPE


@dataclass
class _Parzen:
    mu: np.ndarray
    sigma: np.ndarray
    weight: np.ndarray
    lo: float
    hi: float

    @classmethod
    def fit(cls, points: np.ndarray, lo: float, hi: float) -> "_Parzen":
        """Gaussian per point plus a broad prior component.

        Each point's width is the larger gap to its sorted neighbours (the
        bounds count as neighbours), clipped to ``[(hi-lo)/min(100, n+1), hi-lo]``.
        """
        width = hi - lo
        srt = np.sort(np.asarray(points, dtype=float))
        n = srt.size
        if n:
            ext = np.concatenate([[lo], srt, [hi]])
            sig = np.maximum(ext[1:-1] - ext[:-2], ext[2:] - ext[1:-1])
            sig = np.clip(sig, width / min(100.0, n + 1.0), width)
        else:
            sig = np.zeros(0)
        mu = np.concatenate([srt, [0.5 * (lo + hi)]])
        sigma = np.concatenate([sig, [width]])
        return cls(mu, sigma, np.full(n + 1, 1.0 / (n + 1)), lo, hi)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.mu.size, size=size, p=self.weight)
        mu, sig = self.mu[comp], self.sigma[comp]
        a, b = (self.lo - mu) / sig, (self.hi - mu) / sig
        return truncnorm.rvs(a, b, loc=mu, scale=sig, size=size, random_state=rng)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        mu, sig = self.mu[None, :], self.sigma[None, :]
        mass = ndtr((self.hi - mu) / sig) - ndtr((self.lo - mu) / sig)
        z = (x - mu) / sig
        comp = -0.5 * z * z - np.log(sig * math.sqrt(2 * math.pi) * mass)
        return logsumexp(comp + np.log(self.weight)[None, :], axis=1)


@dataclass
class TPE:
    """Proposal generator over box ``bounds`` (name -> (lo, hi))."""

    bounds: dict[str, tuple[float, float]]
    seed: int = 0
    gamma: float = 0.25
    n_candidates: int = 24
    n_startup: int = 20
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = substream(self.seed, "tpe")

    def ask(self, xs: Sequence[dict], ys: Sequence[float]) -> dict[str, float]:
        names = list(self.bounds)
        finite = [i for i, y in enumerate(ys) if np.isfinite(y)]
        if len(finite) < max(self.n_startup, 2):
            return {k: float(self.rng.uniform(*self.bounds[k])) for k in names}
        y = np.asarray([ys[i] for i in finite])
        order = np.argsort(y, kind="stable")
        n_good = max(1, int(math.ceil(self.gamma * y.size)))
        good, bad = order[:n_good], order[n_good:]
        cand = {}
        score = np.zeros(self.n_candidates)
        for k in names:
            lo, hi = self.bounds[k]
            vals = np.asarray([xs[finite[i]][k] for i in range(y.size)])
            lpdf = _Parzen.fit(vals[good], lo, hi)
            gpdf = _Parzen.fit(vals[bad], lo, hi)
            c = lpdf.sample(self.rng, self.n_candidates)
            cand[k] = c
            score += lpdf.logpdf(c) - gpdf.logpdf(c)
        best = int(np.argmax(score))
        return {k: float(np.clip(cand[k][best], *self.bounds[k])) for k in names}


def tpe_minimize(func: Callable[[dict], float], bounds: dict[str, tuple[float, float]], n_trials: int,
                 seed: int = 0, **tpe_kw) -> tuple[list[dict], list[float]]:
    """Minimise ``func`` over ``bounds``; returns all points and values in order."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    tpe = TPE(bounds, seed, **tpe_kw)
    xs, ys = [], []
    for _ in range(n_trials):
        x = tpe.ask(xs, ys)
        xs.append(x)
        ys.append(float(func(x)))
    return xs, ys


# --------------------------------------------------------------------------
# simulator objective


@dataclass
class Trial:
    index: int
    params: ParameterVector
    loss: float
    losses: tuple[float, ...]
    series: tuple[float, ...] = ()

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "params": self.params.as_dict(),
            "loss": self.loss,
            "losses": list(self.losses),
            "series": list(self.series),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Trial":
        return cls(d["index"], ParameterVector(**d["params"]), d["loss"], tuple(d["losses"]), tuple(d["series"]))


def _run_loss(job):
    scenario, params, months, seed, consts, actual, lam = job
    tr = run(scenario, params, months, seed, consts)
    sim = tr.region_median[:months]
    return combined_loss(actual, sim, lam).combined, sim


@dataclass
class CalibrationProblem:
    """Mean combined loss over ``repeats`` runs on the training months.

    Repeat ``k`` uses the same seed for every parameter vector, so trials are
    compared on common random numbers.
    """

    scenario: Scenario
    actual: np.ndarray
    train_months: int
    repeats: int = 3
    seed: int = 0
    lam: float = 0.5
    consts: BehaviorConstants | None = None
    pool: ProcessPoolExecutor | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.actual = np.asarray(self.actual, dtype=float)
        if not 0 < self.train_months <= min(self.actual.size, self.scenario.months):
            raise DegenerateSplit("training window outside the observed series")

    def seeds(self) -> list[int]:
        return [derive_seed(self.seed, "repeat", k) for k in range(self.repeats)]

    def evaluate(self, params: ParameterVector) -> tuple[float, list[float], np.ndarray]:
        m = self.train_months
        jobs = [(self.scenario, params, m, s, self.consts, self.actual[:m], self.lam) for s in self.seeds()]
        out = list(self.pool.map(_run_loss, jobs)) if self.pool is not None else [_run_loss(j) for j in jobs]
        losses = [float(o[0]) for o in out]
        best = int(np.argmin(losses))
        return float(np.mean(losses)), losses, out[best][1]

    def trial(self, index: int, params: ParameterVector) -> Trial:
        mean, losses, series = self.evaluate(params)
        return Trial(index, params, mean, tuple(losses), tuple(float(v) for v in series))


@dataclass
class CalibrationResult:
    trials: list[Trial]

    @property
    def best(self) -> Trial:
        return min(self.trials, key=lambda t: (t.loss, t.index))

    def write_jsonl(self, path: str | Path, header: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            if header:
                fh.write(json.dumps({"provenance": header}, sort_keys=True) + "\n")
            for t in self.trials:
                fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")
        return path


def read_trials(path: str | Path) -> list[Trial]:
    out = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        if "provenance" not in d:
            out.append(Trial.from_json(d))
    return out


def optimize(problem: CalibrationProblem, n_trials: int, seed: int = 0, callback=None, **tpe_kw) -> CalibrationResult:
    """TPE search over the parameter box; budget exhaustion returns every trial so far."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    tpe = TPE(SEARCH_SPACE, seed, **tpe_kw)
    xs, ys, trials = [], [], []
    for i in range(n_trials):
        x = tpe.ask(xs, ys)
        t = problem.trial(i, ParameterVector(**x))
        xs.append(x)
        ys.append(t.loss)
        trials.append(t)
        if callback is not None:
            callback(t)
    return CalibrationResult(trials)


def random_search(problem: CalibrationProblem, n: int, seed: int = 0) -> list[Trial]:
    """Uniform draws over the parameter box, for baseline comparisons."""
    rng = substream(seed, "random-search")
    out = []
    for i in range(n):
        x = {k: float(rng.uniform(*SEARCH_SPACE[k])) for k in PARAM_NAMES}
        out.append(problem.trial(i, ParameterVector(**x)))
    return out


# --------------------------------------------------------------------------
# global constraint


def peak_predicate(series) -> bool:
    """True when the middle value exceeds both the first and the last."""
    x = np.asarray(series, dtype=float)
    if x.size < 3:
        return False
    mid = x.size // 2
    return bool(x[mid] > x[0] and x[mid] > x[-1])


CONSTRAINTS = {"peak": peak_predicate, "none": lambda series: True}


def apply_global_constraint(trials: Sequence[Trial], constraint: Callable | str = "peak") -> Trial:
    """Lowest-loss trial whose best-run series satisfies ``constraint``.

    Warns with :class:`NoSurvivingTrial` and returns the unconstrained best
    when nothing survives.
    """
    if not trials:
        raise ValueError("no trials")
    pred = CONSTRAINTS[constraint] if isinstance(constraint, str) else constraint
    survivors = [t for t in trials if pred(t.series)]
    key = lambda t: (t.loss, t.index)  # noqa: E731
    if not survivors:
        warnings.warn("no trial satisfies the constraint; returning the unconstrained best", NoSurvivingTrial)
        return min(trials, key=key)
    return min(survivors, key=key)
