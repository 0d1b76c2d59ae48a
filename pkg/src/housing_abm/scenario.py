"""Scenario inputs: areas, price samples, brackets and exogenous series.

A scenario is either generated synthetically or loaded from a directory::

    scenario.yaml        scale, periods, split, tax, liquidity brackets,
                         constant overrides, default parameters
    areas.csv            area,population_weight
    edges.csv            area_a,area_b
    sales.csv            area,month,price
    income_brackets.csv  area,lower,upper,probability
    exogenous.csv        month,mortgage_rate,overseas_approvals,
                         overseas_value,households,dwellings

Months are relative to the first recorded month: burn-in months are
negative. Sales with ``month < 0`` seed the price densities; sales with
``0 <= month`` form the observed price series used for scoring.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from housing_abm.entities import TAX_SCHEDULES, TaxSchedule
from housing_abm.graph import RegionGraph, Topology, TopologyKind, build_graph
from housing_abm.kde import PriceDensity, fit_price_density
from housing_abm.rng import substream

SCENARIO_FILES = ("areas.csv", "edges.csv", "sales.csv", "income_brackets.csv", "exogenous.csv")
CONFIG_FILE = "scenario.yaml"
EXOGENOUS_COLUMNS = ("mortgage_rate", "overseas_approvals", "overseas_value", "households", "dwellings")


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario data."""


@dataclass(frozen=True)
class Scenario:
    """Everything needed to build and drive a world.

    Exogenous series are indexed by simulated month, burn-in first: entry
    ``k`` is month ``k - equilibration``.
    """

    area_names: tuple[str, ...]
    population_weights: np.ndarray
    topology: str
    edges: tuple[tuple[int, int], ...]
    sales: np.ndarray  # structured: area (int), month (int), price (float)
    income_edges: np.ndarray  # (K+1,) monthly income
    income_probs: np.ndarray  # (n_areas, K)
    liquidity_edges: np.ndarray  # (L+1,)
    liquidity_probs: np.ndarray  # (L,)
    exogenous: dict[str, np.ndarray]
    months: int
    equilibration: int = 12
    scale: float = 100.0
    split: int | None = None
    tax: TaxSchedule = TAX_SCHEDULES["2016"]
    owner_share: float = 0.62
    rent_yield: float = 0.04
    constants: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    name: str = "scenario"

    def __post_init__(self):
        n = len(self.area_names)
        w = np.asarray(self.population_weights, dtype=float)
        if w.shape != (n,) or (w < 0).any() or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ScenarioError("population weights must be non-negative and sum to 1")
        if self.scale < 1:
            raise ScenarioError("scale must be >= 1")
        need = self.equilibration + self.months
        for key in EXOGENOUS_COLUMNS:
            series = self.exogenous.get(key)
            if series is None or len(series) < need:
                raise ScenarioError(f"exogenous series {key!r} must cover {need} months")
        for key in ("households", "dwellings"):
            if np.any(np.diff(self.exogenous[key][:need]) < 0):
                raise ScenarioError(f"{key} projection must be non-decreasing")
        if self.income_probs.shape != (n, len(self.income_edges) - 1):
            raise ScenarioError("income_probs must be (n_areas, n_brackets)")
        if self.split is not None and not 0 < self.split < self.months:
            raise ScenarioError("split must fall strictly inside the recorded months")

    @property
    def n_areas(self) -> int:
        return len(self.area_names)

    @property
    def horizon(self) -> int:
        return self.equilibration + self.months

    def graph(self) -> RegionGraph:
        kind = TopologyKind(self.topology)
        topo = Topology(kind, self.edges) if kind is TopologyKind.ADJACENCY else Topology(kind)
        return build_graph(topo, self.n_areas, self.area_names)

    def initial_sales(self, area: int | None = None) -> np.ndarray:
        s = self.sales
        mask = s["month"] < 0
        if area is not None:
            mask &= s["area"] == area
        return s["price"][mask]

    def price_densities(self) -> tuple[list[PriceDensity], PriceDensity]:
        pooled = fit_price_density(self.initial_sales())
        return [fit_price_density(self.initial_sales(a), pooled) for a in range(self.n_areas)], pooled

    def observed_median(self) -> np.ndarray | None:
        """Monthly median of recorded-period sales, or None when there are none."""
        s = self.sales[(self.sales["month"] >= 0) & (self.sales["month"] < self.months)]
        if s.size == 0:
            return None
        out = np.full(self.months, np.nan)
        for m in range(self.months):
            p = s["price"][s["month"] == m]
            if p.size:
                out[m] = np.median(p)
        return _carry_forward(out)

    def with_observed(self, series) -> "Scenario":
        """Copy whose recorded-period sales are one sale per month at ``series``."""
        series = np.asarray(series, dtype=float)
        keep = self.sales[self.sales["month"] < 0]
        extra = np.zeros(series.size, dtype=keep.dtype)
        extra["area"] = 0
        extra["month"] = np.arange(series.size)
        extra["price"] = series
        return replace(self, sales=np.concatenate([keep, extra]))

    def exogenous_held(self, split: int | None = None) -> dict[str, np.ndarray]:
        """Exogenous series with rates and overseas demand frozen after ``split``.

        Forecast months reuse the last training value, since no future value
        would be known at forecast time.
        """
        split = self.split if split is None else split
        out = {k: np.asarray(v, dtype=float).copy() for k, v in self.exogenous.items()}
        if split is not None:
            cut = self.equilibration + split
            for key in ("mortgage_rate", "overseas_approvals", "overseas_value"):
                out[key][cut:] = out[key][cut - 1]
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, blob in sorted(scenario_blobs(self).items()):
            h.update(name.encode())
            h.update(blob)
        return h.hexdigest()[:16]


def _carry_forward(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    valid = np.flatnonzero(~np.isnan(x))
    if valid.size == 0:
        return x
    x[: valid[0]] = x[valid[0]]
    for i in range(valid[0] + 1, x.size):
        if np.isnan(x[i]):
            x[i] = x[i - 1]
    return x


SALES_DTYPE = np.dtype([("area", np.int64), ("month", np.int64), ("price", np.float64)])


# --------------------------------------------------------------------------
# brackets


def bracket_sample(rng: np.random.Generator, edges, probs, size: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    k = rng.choice(len(probs), size=size, p=np.asarray(probs) / np.sum(probs))
    return rng.uniform(edges[k], edges[k + 1])


def bracket_cdf(x, edges, probs) -> np.ndarray:
    """Piecewise-linear CDF of a bracketed distribution."""
    probs = np.asarray(probs, dtype=float) / np.sum(probs)
    cum = np.concatenate([[0.0], np.cumsum(probs)])
    return np.interp(x, np.asarray(edges, dtype=float), cum)


def bracket_quantile(q, edges, probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=float) / np.sum(probs)
    cum = np.concatenate([[0.0], np.cumsum(probs)])
    keep = np.concatenate([[True], probs > 0])
    return np.interp(q, cum[keep], np.asarray(edges, dtype=float)[keep])


def apportion(total: int, weights) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(np.int64)
    short = total - base.sum()
    if short > 0:
        order = np.lexsort((np.arange(w.size), -(raw - base)))
        base[order[:short]] += 1
    return base


# --------------------------------------------------------------------------
# synthetic generation

INCOME_EDGES = np.array([0, 1500, 3000, 4500, 6000, 8000, 10000, 13000, 17000, 23000, 35000], dtype=float)
LIQUIDITY_EDGES = np.array([0, 5e3, 15e3, 40e3, 80e3, 150e3, 300e3, 600e3, 1.2e6], dtype=float)
LIQUIDITY_PROBS = np.array([0.12, 0.14, 0.16, 0.16, 0.14, 0.12, 0.10, 0.06])


def _planar_edges(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Random spanning tree over a Delaunay triangulation plus extra short edges."""
    if n == 1:
        return []
    if n == 2:
        return [(0, 1)]
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import minimum_spanning_tree
    from scipy.spatial import Delaunay

    pts = rng.random((n, 2))
    tri = Delaunay(pts)
    cand = set()
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = sorted((int(simplex[a]), int(simplex[b])))
                cand.add((i, j))
    cand = sorted(cand)
    length = np.array([np.linalg.norm(pts[i] - pts[j]) for i, j in cand])
    rows, cols = zip(*cand)
    mst = minimum_spanning_tree(coo_matrix((length, (rows, cols)), shape=(n, n))).tocoo()
    tree = {tuple(sorted((int(a), int(b)))) for a, b in zip(mst.row, mst.col)}
    extra = [e for e in cand if e not in tree and rng.random() < 0.5]
    return sorted(tree | set(extra))


def generate_synthetic_scenario(
    seed: int,
    n_areas: int,
    months: int,
    households: float = 1_800_000,
    equilibration: int = 12,
    scale: float = 100.0,
    topology: str = "adjacency",
    split: float | None = 0.75,
    price_to_income: float = 3.5,
    bid_markup: float = 1.75,
    liquidity_scale: float = 2.0,
) -> Scenario:
    """Random but plausible city with ``n_areas`` submarkets.

    Area price levels are log-normal around a regional level and area income
    distributions shift with them. The base price is ``price_to_income``
    years of median income, and the bid constant makes a median earner's bid
    ``bid_markup`` times that base price. ``liquidity_scale`` multiplies the
    cash bracket edges.
    """
    if n_areas < 1:
        raise ScenarioError("n_areas must be >= 1")
    if months < 0:
        raise ScenarioError("months must be >= 0")
    rng = substream(seed, "scenario")
    if topology == "singleton" and n_areas != 1:
        raise ScenarioError("singleton topology needs n_areas == 1")
    edges = _planar_edges(rng, n_areas) if topology == "adjacency" else []
    weights = rng.dirichlet(np.full(n_areas, 4.0)) if n_areas > 1 else np.ones(1)
    weights = weights / weights.sum()

    med_income = 7000.0
    base_price = price_to_income * 12.0 * med_income
    level = np.exp(rng.normal(0.0, 0.35, n_areas)) if n_areas > 1 else np.ones(1)
    level = level / np.exp(np.average(np.log(level), weights=weights))

    rows = []
    n_sales = 80 * n_areas
    for a in range(n_areas):
        k = max(5, int(round(weights[a] * n_sales)))
        month = rng.integers(-3, 0, k)
        price = np.exp(rng.normal(np.log(base_price * level[a]), 0.40, k))
        rows.extend(zip([a] * k, month.tolist(), price.tolist()))
    sales = np.array(rows, dtype=SALES_DTYPE)

    centres = 0.5 * (np.log(INCOME_EDGES[1:]) + np.log(np.maximum(INCOME_EDGES[:-1], 750.0)))
    income_probs = np.empty((n_areas, len(INCOME_EDGES) - 1))
    for a in range(n_areas):
        mu = np.log(med_income * level[a] ** 0.6)
        p = np.exp(-0.5 * ((centres - mu) / 0.65) ** 2)
        income_probs[a] = p / p.sum()

    horizon = equilibration + months
    t = np.arange(horizon) - equilibration
    rate = 0.05 + 0.008 * np.sin(2 * np.pi * t / 60.0 + rng.uniform(0, 2 * np.pi)) - 0.00005 * t
    hh = households * (1.0 + 0.015 * t / 12.0)
    exogenous = {
        "mortgage_rate": rate,
        "overseas_approvals": np.full(horizon, 2500.0 * households / 1.8e6),
        "overseas_value": np.full(horizon, 1.8 * base_price),
        "households": hh,
        "dwellings": 1.03 * hh,
    }
    phi_I = 0.80
    mean_care = 0.025
    region_income = float(bracket_quantile(0.5, INCOME_EDGES, income_probs.T @ weights))
    phi_b = bid_markup * base_price * (rate[0] + mean_care) / region_income ** phi_I
    split_month = None
    if split is not None and months >= 2:
        split_month = min(max(int(np.floor(split * months)), 1), months - 1)
    return Scenario(
        area_names=tuple(f"A{a:02d}" for a in range(n_areas)),
        population_weights=weights,
        topology=topology,
        edges=tuple(edges),
        sales=sales,
        income_edges=INCOME_EDGES.copy(),
        income_probs=income_probs,
        liquidity_edges=liquidity_scale * LIQUIDITY_EDGES,
        liquidity_probs=LIQUIDITY_PROBS.copy(),
        exogenous=exogenous,
        months=months,
        equilibration=equilibration,
        scale=scale,
        split=split_month,
        constants={"phi_b": float(phi_b), "phi_I": phi_I},
        name=f"synthetic-{seed}-{n_areas}x{months}",
    )


# --------------------------------------------------------------------------
# file bundle


def _fmt(x: float) -> str:
    return repr(float(x))


def scenario_blobs(s: Scenario) -> dict[str, bytes]:
    """Serialised file contents, keyed by file name."""
    out = {}
    rows = ["area,population_weight"] + [f"{n},{_fmt(w)}" for n, w in zip(s.area_names, s.population_weights)]
    out["areas.csv"] = ("\n".join(rows) + "\n").encode()
    rows = ["area_a,area_b"] + [f"{s.area_names[a]},{s.area_names[b]}" for a, b in s.edges]
    out["edges.csv"] = ("\n".join(rows) + "\n").encode()
    rows = ["area,month,price"] + [f"{s.area_names[r['area']]},{int(r['month'])},{_fmt(r['price'])}" for r in s.sales]
    out["sales.csv"] = ("\n".join(rows) + "\n").encode()
    rows = ["area,lower,upper,probability"]
    for a, name in enumerate(s.area_names):
        for k in range(len(s.income_edges) - 1):
            rows.append(f"{name},{_fmt(s.income_edges[k])},{_fmt(s.income_edges[k + 1])},{_fmt(s.income_probs[a, k])}")
    out["income_brackets.csv"] = ("\n".join(rows) + "\n").encode()
    rows = ["month," + ",".join(EXOGENOUS_COLUMNS)]
    for k in range(s.horizon):
        vals = ",".join(_fmt(s.exogenous[c][k]) for c in EXOGENOUS_COLUMNS)
        rows.append(f"{k - s.equilibration},{vals}")
    out["exogenous.csv"] = ("\n".join(rows) + "\n").encode()
    config = {
        "name": s.name,
        "topology": s.topology,
        "scale": float(s.scale),
        "months": int(s.months),
        "equilibration": int(s.equilibration),
        "split": None if s.split is None else int(s.split),
        "owner_share": float(s.owner_share),
        "rent_yield": float(s.rent_yield),
        "tax": {"thresholds": [float(x) for x in s.tax.thresholds], "rates": [float(x) for x in s.tax.rates]},
        "liquidity": {"edges": [float(x) for x in s.liquidity_edges], "probabilities": [float(x) for x in s.liquidity_probs]},
        "constants": {k: float(v) for k, v in sorted(s.constants.items())},
        "parameters": {k: float(v) for k, v in sorted(s.parameters.items())},
    }
    out[CONFIG_FILE] = yaml.safe_dump(config, sort_keys=True).encode()
    return out


def save_scenario(s: Scenario, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, blob in scenario_blobs(s).items():
        (d / name).write_bytes(blob)
    return d


def _read_rows(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise ScenarioError(f"missing scenario file {path}")
    with open(path, newline="") as fh:
        return [row for row in csv.DictReader(line for line in fh if not line.startswith("#"))]


def load_scenario(directory: str | Path) -> Scenario:
    """Read a scenario bundle written by :func:`save_scenario` or by hand."""
    d = Path(directory)
    if not d.is_dir():
        raise ScenarioError(f"scenario directory {d} not found")
    cfg_path = d / CONFIG_FILE
    if not cfg_path.exists():
        raise ScenarioError(f"missing {cfg_path}")
    cfg = yaml.safe_load(cfg_path.read_text()) or {}
    try:
        areas = _read_rows(d / "areas.csv")
        names = tuple(r["area"] for r in areas)
        index = {n: i for i, n in enumerate(names)}
        weights = np.array([float(r["population_weight"]) for r in areas])
        weights = weights / weights.sum()

        edges = []
        for r in _read_rows(d / "edges.csv"):
            if r["area_a"] not in index or r["area_b"] not in index:
                raise ScenarioError(f"edge names unknown area: {r}")
            edges.append((index[r["area_a"]], index[r["area_b"]]))

        sales = np.array(
            [(index[r["area"]], int(r["month"]), float(r["price"])) for r in _read_rows(d / "sales.csv")],
            dtype=SALES_DTYPE,
        )

        brackets = _read_rows(d / "income_brackets.csv")
        bounds = sorted({(float(r["lower"]), float(r["upper"])) for r in brackets})
        income_edges = np.array([b[0] for b in bounds] + [bounds[-1][1]])
        col = {b: k for k, b in enumerate(bounds)}
        income_probs = np.zeros((len(names), len(bounds)))
        for r in brackets:
            income_probs[index[r["area"]], col[(float(r["lower"]), float(r["upper"]))]] = float(r["probability"])
        tot = income_probs.sum(axis=1, keepdims=True)
        # hand-written rows may not sum to 1; exact rows stay bit-identical
        income_probs = np.where(np.abs(tot - 1.0) > 1e-12, income_probs / tot, income_probs)

        exo_rows = _read_rows(d / "exogenous.csv")
        exo_rows.sort(key=lambda r: int(r["month"]))
        exogenous = {c: np.array([float(r[c]) for r in exo_rows]) for c in EXOGENOUS_COLUMNS}
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario data in {d}: {exc}") from exc

    tax = cfg.get("tax")
    liq = cfg.get("liquidity", {})
    return Scenario(
        area_names=names,
        population_weights=weights,
        topology=cfg.get("topology", "adjacency" if len(names) > 1 else "singleton"),
        edges=tuple(edges),
        sales=sales,
        income_edges=income_edges,
        income_probs=income_probs,
        liquidity_edges=np.asarray(liq.get("edges", LIQUIDITY_EDGES), dtype=float),
        liquidity_probs=np.asarray(liq.get("probabilities", LIQUIDITY_PROBS), dtype=float),
        exogenous=exogenous,
        months=int(cfg["months"]),
        equilibration=int(cfg.get("equilibration", 12)),
        scale=float(cfg.get("scale", 100.0)),
        split=cfg.get("split"),
        tax=TaxSchedule(tuple(tax["thresholds"]), tuple(tax["rates"])) if tax else TAX_SCHEDULES["2016"],
        owner_share=float(cfg.get("owner_share", 0.62)),
        rent_yield=float(cfg.get("rent_yield", 0.04)),
        constants=dict(cfg.get("constants") or {}),
        parameters=dict(cfg.get("parameters") or {}),
        name=str(cfg.get("name", d.name)),
    )
