"""Per-month simulation output and its CSV / JSON export.

CSV layout (schema version 1): ``#``-prefixed provenance lines, then a
header and one row per month per area followed by a ``region`` row::

    month,area,median_price,mean_price,hpi,deals,listings,listing_fraction,
    sold_to_list,listing_probability,carried,households

Area rows leave ``hpi`` and ``mean_price`` empty. ``carried`` is 1 when the
month had no deals in that scope and the previous median was carried forward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class MoverKind(IntEnum):
    NEW_RENTER = 0
    NEW_OWNER = 1
    FIRST_TIME_BUYER = 2
    LOCAL_INVESTOR = 3
    OVERSEAS_INVESTOR = 4


class BuyerKind(IntEnum):
    HOME_BUYER = 0
    LOCAL_INVESTOR = 1
    OVERSEAS = 2


DEAL_DTYPE = np.dtype([
    ("month", np.int64), ("area", np.int64), ("price", np.float64), ("buyer_kind", np.int64),
    ("bidder", np.int64), ("seller", np.int64), ("dwelling", np.int64), ("sold_to_list", np.float64),
])
MOVE_DTYPE = np.dtype([
    ("month", np.int64), ("household", np.int64), ("from_area", np.int64),
    ("to_area", np.int64), ("kind", np.int64),
])
REGION_FIELDS = ("region_median", "region_mean", "hpi", "sold_to_list", "n_deals", "n_listings",
                 "n_bids", "households", "dwellings", "unhoused", "carried")
AREA_FIELDS = ("area_median", "area_listing_fraction", "area_sold_to_list", "area_deals",
               "listing_probability", "area_carried", "area_households")


@dataclass
class SimulationTrace:
    """Monthly indicators plus the deal and movement logs.

    Region arrays have shape ``(months,)``; area arrays ``(months, n_areas)``.
    """

    month: np.ndarray
    region_median: np.ndarray
    region_mean: np.ndarray
    hpi: np.ndarray
    sold_to_list: np.ndarray
    n_deals: np.ndarray
    n_listings: np.ndarray
    n_bids: np.ndarray
    households: np.ndarray
    dwellings: np.ndarray
    unhoused: np.ndarray
    carried: np.ndarray
    area_median: np.ndarray
    area_listing_fraction: np.ndarray
    area_sold_to_list: np.ndarray
    area_deals: np.ndarray
    listing_probability: np.ndarray
    area_carried: np.ndarray
    area_households: np.ndarray
    deals: np.ndarray
    moves: np.ndarray
    area_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.month.size)

    @property
    def n_areas(self) -> int:
        return int(self.area_median.shape[1]) if self.area_median.ndim == 2 else 0

    def recorded(self, start: int = 0) -> "SimulationTrace":
        """Months ``>= start`` only, with logs filtered to match."""
        keep = self.month >= start
        kw = {k: getattr(self, k)[keep] for k in ("month",) + REGION_FIELDS + AREA_FIELDS}
        return SimulationTrace(
            **kw,
            deals=self.deals[self.deals["month"] >= start],
            moves=self.moves[self.moves["month"] >= start],
            area_names=self.area_names,
            meta=dict(self.meta),
        )

    def window(self, lo: int, hi: int) -> "SimulationTrace":
        keep = (self.month >= lo) & (self.month < hi)
        kw = {k: getattr(self, k)[keep] for k in ("month",) + REGION_FIELDS + AREA_FIELDS}
        d, m = self.deals, self.moves
        return SimulationTrace(
            **kw,
            deals=d[(d["month"] >= lo) & (d["month"] < hi)],
            moves=m[(m["month"] >= lo) & (m["month"] < hi)],
            area_names=self.area_names,
            meta=dict(self.meta),
        )

    # ------------------------------------------------------------------ export

    def to_csv(self, path: str | Path, header: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.csv_text(header))
        return path

    def csv_text(self, header: dict | None = None) -> str:
        lines = [f"# schema_version: {SCHEMA_VERSION}"]
        for k, v in sorted((header or self.meta).items()):
            lines.append(f"# {k}: {v}")
        lines.append("month,area,median_price,mean_price,hpi,deals,listings,listing_fraction,"
                     "sold_to_list,listing_probability,carried,households")
        names = self.area_names or tuple(str(a) for a in range(self.n_areas))
        for i, m in enumerate(self.month.tolist()):
            for a, name in enumerate(names):
                lines.append(",".join((
                    str(m), name, _num(self.area_median[i, a]), "", "",
                    str(int(self.area_deals[i, a])), "", _num(self.area_listing_fraction[i, a]),
                    _num(self.area_sold_to_list[i, a]), _num(self.listing_probability[i, a]),
                    str(int(self.area_carried[i, a])), str(int(self.area_households[i, a])),
                )))
            lines.append(",".join((
                str(m), "region", _num(self.region_median[i]), _num(self.region_mean[i]),
                _num(self.hpi[i]), str(int(self.n_deals[i])), str(int(self.n_listings[i])), "",
                _num(self.sold_to_list[i]), "", str(int(self.carried[i])), str(int(self.households[i])),
            )))
        return "\n".join(lines) + "\n"

    def deals_csv_text(self) -> str:
        names = self.area_names or tuple(str(a) for a in range(self.n_areas))
        rows = ["month,area,price,buyer_kind"]
        for d in self.deals:
            rows.append(f"{int(d['month'])},{names[int(d['area'])]},{_num(d['price'])},"
                        f"{BuyerKind(int(d['buyer_kind'])).name.lower()}")
        return "\n".join(rows) + "\n"

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "months": len(self),
            "deals": int(self.n_deals.sum()),
            "region_median": _list(self.region_median),
            "hpi": _list(self.hpi),
            "meta": {k: self.meta[k] for k in sorted(self.meta)},
        }


def _num(x) -> str:
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _list(a) -> list:
    return [None if np.isnan(v) else float(v) for v in np.asarray(a, dtype=float)]


def read_region_series(path: str | Path, column: str = "median_price") -> np.ndarray:
    """Region-level column of a trace CSV, or a two-column ``month,price`` file.

    For a multi-run file only run 0 is read.
    """
    months, values = [], []
    header = None
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        row = dict(zip(header, cells))
        if "area" in row and row["area"] != "region":
            continue
        if row.get("run", "0") != "0":
            continue
        key = column if column in row else ("price" if "price" in row else header[-1])
        months.append(int(row["month"]))
        values.append(float(row[key]) if row[key] else np.nan)
    if header is None:
        raise ValueError(f"{path}: no data rows")
    order = np.argsort(months, kind="stable")
    return np.asarray(values, dtype=float)[order]


def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class StoredRun:
    """One run read back from a trace CSV."""

    month: np.ndarray
    region_median: np.ndarray
    area_median: np.ndarray
    area_households: np.ndarray
    area_names: tuple[str, ...]


def read_trace_csv(path: str | Path) -> dict[int, StoredRun]:
    """Runs of a (possibly multi-run) trace CSV keyed by run index."""
    header = None
    rows: dict[int, list[dict]] = {}
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            continue
        row = dict(zip(header, cells))
        rows.setdefault(int(row.get("run", 0)), []).append(row)
    if header is None or "area" not in header:
        raise ValueError(f"{path}: not a trace CSV")
    out = {}
    for r, rs in sorted(rows.items()):
        names = tuple(dict.fromkeys(x["area"] for x in rs if x["area"] != "region"))
        col = {n: i for i, n in enumerate(names)}
        months = sorted({int(x["month"]) for x in rs})
        mrow = {m: i for i, m in enumerate(months)}
        med = np.full(len(months), np.nan)
        amed = np.full((len(months), len(names)), np.nan)
        hh = np.zeros((len(months), len(names)), dtype=np.int64)
        for x in rs:
            i = mrow[int(x["month"])]
            v = float(x["median_price"]) if x["median_price"] else np.nan
            if x["area"] == "region":
                med[i] = v
            else:
                amed[i, col[x["area"]]] = v
                hh[i, col[x["area"]]] = int(x.get("households") or 0)
        out[r] = StoredRun(np.asarray(months), med, amed, hh, names)
    return out


def read_moves_csv(path: str | Path) -> dict[int, np.ndarray]:
    """Movement logs keyed by run from ``run,month,household,from_area,to_area,kind``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.array([[int(c) for c in ln.split(",")] for ln in lines[1:]], dtype=np.int64).reshape(-1, 6)
    out = {}
    for r in np.unique(data[:, 0]) if data.size else []:
        d = data[data[:, 0] == r]
        m = np.zeros(d.shape[0], MOVE_DTYPE)
        for j, name in enumerate(MOVE_DTYPE.names):
            m[name] = d[:, j + 1]
        out[int(r)] = m
    return out
