"""Monte Carlo ensembles of independent runs and their per-month summary."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from housing_abm import __version__
from housing_abm.behavior import BehaviorConstants, ParameterVector
from housing_abm.engine import run
from housing_abm.rng import derive_seed
from housing_abm.scenario import Scenario
from housing_abm.trace import SimulationTrace, _num

STATS = ("median", "mean", "min", "max", "std")


def run_seed(base_seed: int, i: int) -> int:
    return derive_seed(base_seed, "run", i)


def summarize(series: np.ndarray) -> dict[str, np.ndarray]:
    """Per-month ensemble statistics of a ``(runs, months)`` array."""
    x = np.asarray(series, dtype=float)
    return {
        "median": np.median(x, axis=0),
        "mean": x.mean(axis=0),
        "min": x.min(axis=0),
        "max": x.max(axis=0),
        "std": x.std(axis=0),
    }


@dataclass
class Ensemble:
    traces: list[SimulationTrace]
    seeds: list[int]
    params: ParameterVector
    base_seed: int

    @property
    def n_runs(self) -> int:
        return len(self.traces)

    def region_series(self, field: str = "region_median") -> np.ndarray:
        return np.stack([getattr(t, field) for t in self.traces])

    def area_series(self, field: str = "area_median") -> np.ndarray:
        """``(runs, months, areas)``."""
        return np.stack([getattr(t, field) for t in self.traces])

    @property
    def summary(self) -> dict[str, np.ndarray]:
        return summarize(self.region_series())

    def provenance(self, scenario: Scenario) -> dict:
        return {
            "version": __version__,
            "scenario": scenario.fingerprint(),
            "base_seed": self.base_seed,
            "runs": self.n_runs,
            "params": ",".join(f"{k}={v!r}" for k, v in self.params.as_dict().items()),
        }

    def traces_csv_text(self, header: dict) -> str:
        """All runs in one CSV: a leading ``run`` column on every trace row."""
        lines = []
        for k, v in sorted(header.items()):
            lines.append(f"# {k}: {v}")
        body_header = None
        for i, tr in enumerate(self.traces):
            rows = [r for r in tr.csv_text({}).splitlines() if not r.startswith("#")]
            if body_header is None:
                body_header = "run," + rows[0]
                lines.append(body_header)
            lines.extend(f"{i},{r}" for r in rows[1:])
        return "\n".join(lines) + "\n"

    def summary_csv_text(self, header: dict) -> str:
        summ = self.summary
        months = self.traces[0].month if self.traces else np.zeros(0, int)
        lines = [f"# {k}: {v}" for k, v in sorted(header.items())]
        lines.append("month," + ",".join(STATS))
        for i, m in enumerate(months.tolist()):
            lines.append(f"{m}," + ",".join(_num(summ[s][i]) for s in STATS))
        return "\n".join(lines) + "\n"

    def summary_json(self, header: dict) -> dict:
        summ = self.summary
        return {
            "provenance": header,
            "months": [int(m) for m in (self.traces[0].month if self.traces else [])],
            "seeds": [int(s) for s in self.seeds],
            "region_median": {k: [float(v) for v in summ[k]] for k in STATS},
        }


def _one(job):
    scenario, params, months, seed, consts = job
    return run(scenario, params, months, seed, consts)


def monte_carlo(
    scenario: Scenario,
    params: ParameterVector,
    months: int | None = None,
    n_runs: int = 100,
    base_seed: int = 0,
    jobs: int | None = 1,
    consts: BehaviorConstants | None = None,
) -> Ensemble:
    """``n_runs`` independent runs with seeds derived from ``base_seed``.

    Run ``i`` always gets the same seed and results are kept in run order, so
    the ensemble does not depend on ``jobs``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = [run_seed(base_seed, i) for i in range(n_runs)]
    work = [(scenario, params, months, s, consts) for s in seeds]
    jobs = (os.cpu_count() or 1) if jobs is None else jobs
    if jobs <= 1 or n_runs == 1:
        traces = [_one(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, n_runs)) as pool:
            traces = list(pool.map(_one, work, chunksize=max(1, n_runs // (4 * jobs))))
    return Ensemble(traces, seeds, params, base_seed)
