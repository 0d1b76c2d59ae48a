"""World state and the monthly step loop.

State is held column-wise in numpy arrays: one row per household and one per
dwelling. Household 0 is the developer, who owns new construction until it
sells. Each month runs, in order: demographics, cashflows, rental renewals,
listings, bids, matching, settlement. Indicators are recomputed at month end.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import math

import numba
import numpy as np

from housing_abm.behavior import (
    VIEW_LOCAL,
    VIEW_UNIFORM,
    BehaviorConstants,
    ParameterVector,
    bid_price_vec,
    bid_urgency,
    heterogeneity,
    list_price_vec,
    listing_probability_vec,
    sell_urgency,
    viewing_tables,
)
from housing_abm.entities import (
    Bank,
    Economy,
    HouseholdKind,
    annuity_payment,
    annuity_principal,
    income_tax_vec,
    offer_loan_vec,
    remaining_balance,
)
from housing_abm.graph import RegionGraph
from housing_abm.market import allocate_rentals, bid_order, contract_length, listing_order, match_kernel
from housing_abm.rng import substream
from housing_abm.scenario import Scenario, apportion, bracket_quantile
from housing_abm.trace import DEAL_DTYPE, MOVE_DTYPE, BuyerKind, MoverKind, SimulationTrace

DEVELOPER = 0
OVERSEAS_ID_BASE = 1 << 40
_OVERSEAS = int(HouseholdKind.OVERSEAS)
_DEVELOPER = int(HouseholdKind.DEVELOPER)


@numba.njit(cache=True)
def _nearest_mean_kernel(g, q, price, month, ids, qg, qq, qid, k):
    """Mean price of the ``k`` entries nearest in quality within the same group.

    ``(g, q)`` must be sorted lexicographically. Equal distances go to the
    later sale month, then the lower id. NaN when the group has no other entry.
    """
    n = g.shape[0]
    out = np.empty(qg.shape[0])
    for i in range(qg.shape[0]):
        lo = np.searchsorted(g, qg[i], side="left")
        hi = np.searchsorted(g, qg[i], side="right")
        left = lo + np.searchsorted(q[lo:hi], qq[i]) - 1
        right = left + 1
        total = 0.0
        got = 0
        while got < k:
            if left >= lo and ids[left] == qid[i]:
                left -= 1
                continue
            if right < hi and ids[right] == qid[i]:
                right += 1
                continue
            has_l = left >= lo
            has_r = right < hi
            if not has_l and not has_r:
                break
            if has_l and has_r:
                dl = qq[i] - q[left]
                dr = q[right] - qq[i]
                take_left = dl < dr or (dl == dr and (month[left] > month[right]
                                                      or (month[left] == month[right] and ids[left] < ids[right])))
            else:
                take_left = has_l
            if take_left:
                total += price[left]
                left -= 1
            else:
                total += price[right]
                right += 1
            got += 1
        out[i] = total / got if got > 0 else np.nan
    return out


@numba.njit(cache=True)
def _progressive_tax(annual, thr, rates):
    tax = 0.0
    n = thr.shape[0]
    for k in range(n):
        if annual <= thr[k]:
            break
        upper = thr[k + 1] if k + 1 < n else np.inf
        tax += (min(annual, upper) - thr[k]) * rates[k]
    return tax


@numba.njit(cache=True)
def _cashflow_kernel(income, liquid, kind, care, growth, stress, since_sale,
                     owner, occupant, quality, rent, m_balance, m_payment, m_rate, m_left,
                     value_ratio, thr, rates, house_tax, cons_share, liq_rate):
    """One month of household cashflows, in place.

    Returns per-household mortgage payments and the totals
    ``(income, tax, consumption, liquid_consumption, maintenance, house_tax, mortgage)``.
    """
    nh = income.shape[0]
    maint = np.zeros(nh)
    htax = np.zeros(nh)
    mort = np.zeros(nh)
    r_in = np.zeros(nh)
    r_out = np.zeros(nh)
    for d in range(owner.shape[0]):
        o = owner[d]
        if o != 0:
            v = quality[d] * value_ratio
            maint[o] += care[o] / 12.0 * v
            htax[o] += house_tax / 12.0 * v
        if m_left[d] > 0:
            interest = m_balance[d] * m_rate[d]
            if m_left[d] == 1:
                principal = m_balance[d]
            else:
                principal = min(m_payment[d] - interest, m_balance[d])
            mort[o] += principal + interest
            m_balance[d] -= principal
            m_left[d] -= 1
            if m_left[d] == 0:
                m_balance[d] = 0.0
        occ = occupant[d]
        if occ >= 0 and occ != o:
            r_out[occ] += rent[d]
            r_in[o] += rent[d]
    totals = np.zeros(7)
    for h in range(nh):
        res = kind[h] != _OVERSEAS and kind[h] != _DEVELOPER
        inc = income[h] if res else 0.0
        tax = _progressive_tax(12.0 * inc, thr, rates) / 12.0
        disposable = inc - tax + r_in[h] - r_out[h] - mort[h] - maint[h] - htax[h]
        cons = cons_share * max(disposable, 0.0) if res else 0.0
        lc = liq_rate / 12.0 * max(liquid[h], 0.0) if res else 0.0
        liquid[h] += disposable - cons - lc
        totals[0] += inc
        totals[1] += tax
        totals[2] += cons
        totals[3] += lc
        totals[4] += maint[h]
        totals[5] += htax[h]
        totals[6] += mort[h]
        if res:
            income[h] *= growth[h]
            stress[h] = stress[h] + 1 if liquid[h] < 0 else 0
        else:
            stress[h] = 0
        if since_sale[h] >= 0:
            since_sale[h] += 1
    return mort, totals


class InfeasibleScenario(ValueError):
    """More households than dwellings to house them."""


class ConservationError(AssertionError):
    pass


# --------------------------------------------------------------------------
# column stores


class _Columns:
    FIELDS: dict[str, tuple[type, object]] = {}

    def __init__(self, n: int = 0):
        for name, (dt, fill) in self.FIELDS.items():
            setattr(self, name, np.full(n, fill, dtype=dt))

    def __len__(self) -> int:
        first = next(iter(self.FIELDS))
        return int(getattr(self, first).size)

    def append(self, k: int, **values) -> np.ndarray:
        start = len(self)
        for name, (dt, fill) in self.FIELDS.items():
            new = np.full(k, fill, dtype=dt)
            if name in values:
                new[:] = values[name]
            setattr(self, name, np.concatenate([getattr(self, name), new]))
        return np.arange(start, start + k)


class Households(_Columns):
    FIELDS = {
        "income": (np.float64, 0.0),
        "liquid": (np.float64, 0.0),
        "kind": (np.int64, int(HouseholdKind.RENTER)),
        "residence": (np.int64, -1),
        "area": (np.int64, 0),
        "since_sale": (np.int64, -1),
        "stress": (np.int64, 0),
        "growth": (np.float64, 1.002),
        "care": (np.float64, 0.025),
        "fresh": (np.bool_, False),
    }


class Dwellings(_Columns):
    FIELDS = {
        "area": (np.int64, 0),
        "quality": (np.float64, 0.0),
        "rent": (np.float64, 0.0),
        "owner": (np.int64, DEVELOPER),
        "occupant": (np.int64, -1),
        "lease": (np.int64, 0),
        "listed": (np.bool_, False),
        "dom": (np.int64, 0),
        "list_h": (np.float64, 1.0),
        "first_list": (np.float64, np.nan),
        "price": (np.float64, np.nan),
        "last_sale": (np.float64, np.nan),
        "last_sale_month": (np.int64, -1),
        "m_balance": (np.float64, 0.0),
        "m_payment": (np.float64, 0.0),
        "m_rate": (np.float64, 0.0),
        "m_left": (np.int64, 0),
    }


@dataclass
class StepLedger:
    """Money entering and leaving household balances in one month."""

    month: int
    liquid_before: float
    liquid_after: float = 0.0
    sources: dict = field(default_factory=dict)
    sinks: dict = field(default_factory=dict)

    def add(self, bucket: str, key: str, value: float) -> None:
        d = self.sources if bucket == "source" else self.sinks
        d[key] = d.get(key, 0.0) + float(value)

    @property
    def residual(self) -> float:
        return (self.liquid_after - self.liquid_before) - (sum(self.sources.values()) - sum(self.sinks.values()))

    @property
    def scale(self) -> float:
        return max(abs(self.liquid_before), abs(self.liquid_after), sum(self.sources.values()),
                   sum(self.sinks.values()), 1.0)


@dataclass
class MatchCapture:
    """Inputs and outputs of one month's matching, kept for inspection."""

    month: int
    bid_amount: np.ndarray
    bid_owner: np.ndarray
    list_price: np.ndarray
    list_dwelling: np.ndarray
    list_seller: np.ndarray
    deal_bid: np.ndarray
    deal_listing: np.ndarray
    listing_probability: np.ndarray
    pview: np.ndarray


def resident_mask(kind: np.ndarray) -> np.ndarray:
    return (kind != _OVERSEAS) & (kind != _DEVELOPER)


# --------------------------------------------------------------------------
# world


class World:
    """Mutable state of one simulation run. Build with :func:`initialize_world`."""

    def __init__(self, scenario: Scenario, seed: int, consts: BehaviorConstants,
                 exogenous: dict | None = None):
        self.scenario = scenario
        self.seed = int(seed)
        self.consts = consts
        self.graph: RegionGraph = scenario.graph()
        self.exo = exogenous if exogenous is not None else scenario.exogenous_held(None)
        self.bank = Bank(np.asarray(self.exo["mortgage_rate"], dtype=float), tax=scenario.tax)
        self.economy = Economy()
        self.rng = substream(seed, "step")
        self.densities, self.pooled = scenario.price_densities()
        self.hh = Households()
        self.dw = Dwellings()
        self.t = 0
        n = scenario.n_areas
        self.area_s = np.ones(n)
        self.area_median = np.array([d.median() for d in self.densities])
        self.listing_fraction = np.zeros(n)
        self.hpi_hist: list[float] = []
        self.hpi0 = float(self.pooled.median())
        self.recent = deque(maxlen=3)  # (areas, prices, ratios) of the last three months
        self.last_median = float(self.pooled.median())
        self.last_mean = self.last_median
        self.last_ratio = 1.0
        self.rows: list[dict] = []
        self.deal_log: list[np.ndarray] = []
        self.move_log: list[tuple] = []
        self.ledgers: list[StepLedger] = []
        self.capture: list[MatchCapture] | None = None
        self._pview_cache: dict[float, np.ndarray] = {}
        self._cum_income = np.cumsum(scenario.income_probs, axis=1)
        self._order = np.zeros(0, dtype=np.int64)
        probs = scenario.income_probs / scenario.income_probs.sum(axis=1, keepdims=True)
        self._income_p = probs
        self._income_cdf = np.hstack([np.zeros((probs.shape[0], 1)), np.cumsum(probs, axis=1)])
        sizes = np.array([d.n for d in self.densities], dtype=np.int64)
        self._kde_offset = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self._kde_size = sizes
        self._kde_points = np.concatenate([d.samples for d in self.densities])
        self._kde_bw = np.array([d.bandwidth for d in self.densities])

    # ---------------------------------------------------------------- helpers

    @property
    def month(self) -> int:
        """Month relative to the first recorded month (burn-in is negative)."""
        return self.t - self.scenario.equilibration

    def target_counts(self, t: int) -> tuple[int, int]:
        k = min(t, len(self.exo["households"]) - 1)
        s = self.scenario.scale
        return int(round(self.exo["households"][k] / s)), int(round(self.exo["dwellings"][k] / s))

    def n_residents(self) -> int:
        return int(resident_mask(self.hh.kind).sum())

    def hpi_ratio(self) -> float:
        return (self.hpi_hist[-1] if self.hpi_hist else self.hpi0) / self.hpi0

    def hpi_change(self) -> float:
        t = len(self.hpi_hist)
        if t < 13:
            return 0.0
        old = self.hpi_hist[t - 13]
        return (self.hpi_hist[t - 1] - old) / old

    def pview(self, alpha: float) -> np.ndarray:
        if alpha not in self._pview_cache:
            self._pview_cache[alpha] = viewing_tables(self.graph, alpha)
        return self._pview_cache[alpha]

    def sample_incomes(self, areas: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        s = self.scenario
        u = rng.random(areas.size)
        k = (u[:, None] > self._cum_income[areas]).sum(axis=1)
        k = np.minimum(k, len(s.income_edges) - 2)
        inc = rng.uniform(s.income_edges[k], s.income_edges[k + 1])
        return np.maximum(inc, 1.0)

    def liquidity_for(self, income: np.ndarray, areas: np.ndarray) -> np.ndarray:
        """Liquid wealth at the same rank as income within the area's distribution."""
        s = self.scenario
        edges = s.income_edges
        k = np.clip(np.searchsorted(edges, income, side="right") - 1, 0, edges.size - 2)
        frac = np.clip((income - edges[k]) / (edges[k + 1] - edges[k]), 0.0, 1.0)
        q = self._income_cdf[areas, k] + frac * self._income_p[areas, k]
        return bracket_quantile(q, s.liquidity_edges, s.liquidity_probs)

    def sample_quality(self, areas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw from each area's positive-truncated price density."""
        out = np.empty(areas.size)
        todo = np.arange(areas.size)
        while todo.size:
            a = areas[todo]
            j = self._kde_offset[a] + np.minimum((rng.random(todo.size) * self._kde_size[a]).astype(np.int64),
                                                 self._kde_size[a] - 1)
            x = self._kde_points[j] + rng.normal(0.0, 1.0, todo.size) * self._kde_bw[a]
            ok = x > 0
            out[todo[ok]] = x[ok]
            todo = todo[~ok]
        return out

    def new_households(self, areas: np.ndarray, rng: np.random.Generator | None = None, **extra) -> np.ndarray:
        rng = self.rng if rng is None else rng
        econ = self.economy
        income = extra.pop("income", None)
        if income is None:
            income = self.sample_incomes(areas, rng)
        k = areas.size
        return self.hh.append(
            k,
            income=income,
            liquid=self.liquidity_for(income, areas),
            area=areas,
            growth=rng.uniform(*econ.income_growth_range, k),
            care=rng.uniform(*econ.house_care_range, k),
            **extra,
        )

    def new_dwellings(self, areas: np.ndarray, rng: np.random.Generator | None = None, **extra) -> np.ndarray:
        rng = self.rng if rng is None else rng
        quality = self.sample_quality(areas, rng)
        return self.dw.append(
            areas.size, area=areas, quality=quality,
            rent=self.scenario.rent_yield / 12.0 * quality, **extra,
        )

    # ----------------------------------------------------------------- step

    def step(self, params: ParameterVector) -> "World":
        """Advance one month."""
        led = StepLedger(self.t, float(self.hh.liquid.sum()))
        self._moves_now: list[tuple] = []
        self._demographics(led)
        self._cashflows(led)
        self._renew_leases()
        p_list = self._listings(params)
        bids = self._bids(params)
        deals = self._match(bids, params, p_list)
        self._settle(deals, bids, led)
        self._rehouse()
        self._update_kinds()
        self._indicators(p_list, bids)
        led.liquid_after = float(self.hh.liquid.sum())
        self.ledgers.append(led)
        self.t += 1
        return self

    # 1 -----------------------------------------------------------------------
    def _demographics(self, led: StepLedger) -> None:
        target_h, target_d = self.target_counts(self.t)
        if target_h > target_d:
            raise InfeasibleScenario(f"{target_h} households but only {target_d} dwellings at month {self.month}")
        w = self.scenario.population_weights
        add_d = target_d - len(self.dw)
        if add_d > 0:
            areas = self.rng.choice(self.scenario.n_areas, size=add_d, p=w)
            self.new_dwellings(areas, owner=DEVELOPER)
        add_h = target_h - self.n_residents()
        if add_h > 0:
            areas = self.rng.choice(self.scenario.n_areas, size=add_h, p=w)
            ids = self.new_households(areas, fresh=True)
            led.add("source", "entrant_endowment", self.hh.liquid[ids].sum())
            self._house(ids)

    # 2 -----------------------------------------------------------------------
    def _cashflows(self, led: StepLedger) -> None:
        hh, dw, econ = self.hh, self.dw, self.economy
        tax = self.bank.tax
        mortgage, totals = _cashflow_kernel(
            hh.income, hh.liquid, hh.kind, hh.care, hh.growth, hh.stress, hh.since_sale,
            dw.owner, dw.occupant, dw.quality, dw.rent,
            dw.m_balance, dw.m_payment, dw.m_rate, dw.m_left,
            self.hpi_ratio(), np.asarray(tax.thresholds, dtype=float), np.asarray(tax.rates, dtype=float),
            econ.house_tax, econ.income_consumption, econ.liquid_consumption,
        )
        led.add("source", "income", totals[0])
        for i, key in enumerate(("tax", "consumption", "liquid_consumption", "maintenance", "house_tax", "mortgage")):
            led.add("sink", key, totals[i + 1])
        self._payments = mortgage

    # 3 -----------------------------------------------------------------------
    def _renew_leases(self) -> None:
        dw = self.dw
        rented = (dw.occupant >= 0) & (dw.occupant != dw.owner)
        dw.lease[rented] -= 1
        due = np.flatnonzero(rented & (dw.lease <= 0))
        if due.size:
            dw.lease[due] = contract_length(self.rng, due.size)

    # 4 -----------------------------------------------------------------------
    def _listings(self, params: ParameterVector) -> np.ndarray:
        dw, hh, c = self.dw, self.hh, self.consts
        p_list = listing_probability_vec(self.listing_fraction, params.beta, c.p_b)
        dev = dw.owner == DEVELOPER
        stale = dw.listed & ~dev & (dw.dom >= c.max_months_listed)
        dw.listed[stale] = False
        dw.dom[stale] = 0
        dw.first_list[stale] = np.nan
        u = self.rng.random(len(dw))
        fresh = (~dw.listed & ~stale & ~dev & (u < p_list[dw.area])) | (~dw.listed & dev)
        n_new = int(fresh.sum())
        dw.listed[fresh] = True
        dw.dom[fresh] = 0
        dw.list_h[fresh] = heterogeneity(self.rng, c.b_h, n_new)

        idx = np.flatnonzero(dw.listed)
        ref = self.reference_price(idx)
        seller = dw.owner[idx]
        urgency = np.where(resident_mask(hh.kind[seller]), sell_urgency(hh.stress[seller], c.u_stress), 1.0)
        dw.price[idx] = list_price_vec(ref, self.area_s[dw.area[idx]], dw.dom[idx], c, dw.list_h[idx], urgency)
        first = idx[np.isnan(dw.first_list[idx])]
        dw.first_list[first] = dw.price[first]
        return p_list

    def reference_price(self, idx: np.ndarray) -> np.ndarray:
        """Mean last sale price of the most similar-quality dwellings in the area.

        Similarity is absolute quality difference, ties going to the most
        recent sale; the dwelling itself is excluded. Areas with no sale
        history fall back to the whole region, then to the initial density
        median.
        """
        dw, k = self.dw, self.consts.n_reference
        out = np.full(idx.size, np.nan)
        if idx.size == 0:
            return out
        order = self._area_quality_order()
        sold = order[~np.isnan(dw.last_sale[order])]
        if sold.size:
            out = self._nearest_mean(idx, sold, dw.area, k)
            miss = np.isnan(out)
            if miss.any():
                by_q = sold[np.argsort(dw.quality[sold], kind="stable")]
                out[miss] = self._nearest_mean(idx[miss], by_q, np.zeros(len(dw), dtype=np.int64), k)
        miss = np.isnan(out)
        if miss.any():
            out[miss] = self.area_median[dw.area[idx[miss]]]
        return out

    def _area_quality_order(self) -> np.ndarray:
        """Dwelling ids sorted by (area, quality, id), extended as stock is built."""
        dw = self.dw
        n_old = self._order.size
        if n_old == len(dw):
            return self._order
        if n_old == 0:
            self._order = np.lexsort((dw.quality, dw.area))
            return self._order
        new = np.arange(n_old, len(dw))
        new = new[np.lexsort((dw.quality[new], dw.area[new]))]
        g, q = dw.area[self._order], dw.quality[self._order]
        pos = np.empty(new.size, dtype=np.int64)
        for i, d in enumerate(new.tolist()):
            lo = np.searchsorted(g, dw.area[d], side="left")
            hi = np.searchsorted(g, dw.area[d], side="right")
            pos[i] = lo + np.searchsorted(q[lo:hi], dw.quality[d], side="right")
        self._order = np.insert(self._order, pos, new)
        return self._order

    def _nearest_mean(self, idx, sold, group, k) -> np.ndarray:
        """``sold`` must already be sorted by (group, quality)."""
        dw = self.dw
        return _nearest_mean_kernel(
            group[sold], dw.quality[sold], dw.last_sale[sold], dw.last_sale_month[sold], sold,
            group[idx], dw.quality[idx], idx, k,
        )

    # 5 -----------------------------------------------------------------------
    def _bids(self, params: ParameterVector) -> dict:
        hh, dw, c, bank = self.hh, self.dw, self.consts, self.bank
        t = self.t
        res = resident_mask(hh.kind)
        in_own = np.zeros(len(hh), dtype=bool)
        housed = np.flatnonzero(hh.residence >= 0)
        in_own[housed] = dw.owner[hh.residence[housed]] == housed
        home = np.flatnonzero(res & ~in_own)
        inv = np.flatnonzero(res & in_own)
        who = np.concatenate([home, inv])
        cls = np.concatenate([np.full(home.size, VIEW_LOCAL), np.full(inv.size, VIEW_UNIFORM)])

        rate = bank.rate(t)
        n = who.size
        H = heterogeneity(self.rng, c.b_h, n)
        ltv = self.rng.uniform(*bank.ltv_range, n)
        amount = bid_price_vec(hh.income[who], params.h, rate, hh.care[who], self.hpi_change(), c, H,
                               bid_urgency(hh.since_sale[who], c.u_rental))
        existing = self._payments[who] if n else np.zeros(0)
        offer = offer_loan_vec(bank, hh.income[who], np.nan_to_num(amount), t, ltv, existing)
        need = np.nan_to_num(amount) - offer + bank.transaction_cost * np.nan_to_num(amount)
        buffer = np.where(cls == VIEW_UNIFORM, c.investor_buffer_months * hh.income[who], 0.0)
        ok = (np.isfinite(amount) & (amount > 0) & (offer >= bank.downshift_ratio * amount)
              & (hh.liquid[who] >= need + buffer))
        bids = {
            "owner": who[ok], "amount": amount[ok], "offer": offer[ok], "ltv": ltv[ok],
            "area": hh.area[who[ok]], "cls": cls[ok],
        }

        # overseas buyers
        k = min(t, len(self.exo["overseas_approvals"]) - 1)
        expected = self.exo["overseas_approvals"][k] / 12.0 / self.scenario.scale
        n_os = int(np.floor(expected)) + int(self.rng.random() < expected - np.floor(expected))
        if n_os > 0:
            os_amount = heterogeneity(self.rng, c.b_h, n_os) * self.exo["overseas_value"][k]
            bids = {
                "owner": np.concatenate([bids["owner"], OVERSEAS_ID_BASE + np.arange(n_os)]),
                "amount": np.concatenate([bids["amount"], os_amount]),
                "offer": np.concatenate([bids["offer"], np.zeros(n_os)]),
                "ltv": np.concatenate([bids["ltv"], np.zeros(n_os)]),
                "area": np.concatenate([bids["area"], np.zeros(n_os, dtype=np.int64)]),
                "cls": np.concatenate([bids["cls"], np.full(n_os, VIEW_UNIFORM)]),
            }
        return bids

    # 6 -----------------------------------------------------------------------
    def _match(self, bids: dict, params: ParameterVector, p_list: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dw = self.dw
        bo = bid_order(bids["amount"], bids["owner"])
        for key in bids:
            bids[key] = bids[key][bo]
        lidx = np.flatnonzero(dw.listed)
        lidx = lidx[listing_order(dw.price[lidx], lidx)]
        nb = bids["amount"].size
        u = self.rng.random((3, nb))
        key = int(self.rng.integers(0, 2**62))
        pview = self.pview(float(params.alpha))
        db, dl = match_kernel(
            bids["amount"], bids["owner"].astype(np.int64), bids["area"].astype(np.int64),
            bids["cls"].astype(np.int64), u[0], u[1], u[2],
            dw.price[lidx], lidx.astype(np.int64), dw.owner[lidx].astype(np.int64), dw.area[lidx],
            pview, key, float(params.alpha), float(self.consts.p_m),
            np.ones((1, 1), dtype=np.bool_), False,
        )
        if self.capture is not None:
            self.capture.append(MatchCapture(
                self.month, bids["amount"].copy(), bids["owner"].copy(), dw.price[lidx].copy(),
                lidx.copy(), dw.owner[lidx].copy(), db.copy(), dl.copy(), p_list.copy(), pview,
            ))
        dom_bump = np.ones(len(dw), dtype=bool)
        dom_bump[lidx[dl]] = False
        dw.dom[dw.listed & dom_bump] += 1
        return db, lidx[dl]

    # 7 -----------------------------------------------------------------------
    def _settle(self, deals, bids: dict, led: StepLedger) -> None:
        db, dl = deals
        hh, dw, bank = self.hh, self.dw, self.bank
        self._deals_now = []
        overseas = bids["owner"][db] >= OVERSEAS_ID_BASE
        n_os = int(overseas.sum())
        os_ids = iter(self.hh.append(n_os, kind=int(HouseholdKind.OVERSEAS), income=0.0).tolist())
        tc = bank.transaction_cost
        r = bank.rate(self.t) / 12.0
        n_months = bank.mortgage_months
        for b, d, is_os in zip(db.tolist(), dl.tolist(), overseas.tolist()):
            price = float(dw.price[d])
            seller = int(dw.owner[d])
            cls = int(bids["cls"][b])
            if is_os:
                buyer = next(os_ids)
                inflow = price * (1.0 + tc)
                hh.liquid[buyer] += inflow
                led.add("source", "overseas_inflow", inflow)
                loan = 0.0
                kind = BuyerKind.OVERSEAS
            else:
                buyer = int(bids["owner"][b])
                loan = min(float(bids["offer"][b]), float(bids["ltv"][b]) * price)
                kind = BuyerKind.HOME_BUYER if cls == VIEW_LOCAL else BuyerKind.LOCAL_INVESTOR
            cash = price - loan + tc * price
            if hh.liquid[buyer] + 1e-9 < cash:
                continue  # insufficient deposit: deal void, listing stays up
            # the loan is paid out to the seller; the buyer's cash covers the rest plus fees
            hh.liquid[buyer] -= cash
            led.add("source", "loan", loan)
            led.add("sink", "fees", tc * price)
            payoff = float(dw.m_balance[d])
            hh.liquid[seller] += price - payoff
            led.add("sink", "payoff", payoff)

            dw.m_balance[d] = dw.m_payment[d] = dw.m_rate[d] = 0.0
            dw.m_left[d] = 0
            if loan > 0:
                dw.m_balance[d] = loan
                dw.m_rate[d] = r
                dw.m_payment[d] = loan * r / (1.0 - math.pow(1.0 + r, -n_months)) if r > 0 else loan / n_months
                dw.m_left[d] = n_months
            ratio = price / dw.first_list[d] if dw.first_list[d] > 0 else 1.0
            dw.owner[d] = buyer
            dw.listed[d] = False
            dw.dom[d] = 0
            dw.first_list[d] = np.nan
            dw.last_sale[d] = price
            dw.last_sale_month[d] = self.t
            if hh.kind[seller] != _OVERSEAS and seller != DEVELOPER:
                hh.since_sale[seller] = 0
            hh.since_sale[buyer] = -1

            occupant = int(dw.occupant[d])
            to_area = int(dw.area[d])
            if kind == BuyerKind.HOME_BUYER:
                prev = int(hh.residence[buyer])
                if prev >= 0 and prev != d:
                    dw.occupant[prev] = -1
                    dw.lease[prev] = 0
                if occupant >= 0 and occupant != buyer:
                    hh.residence[occupant] = -1
                dw.occupant[d] = buyer
                dw.lease[d] = 0
                hh.residence[buyer] = d
                mk = MoverKind.NEW_OWNER if hh.fresh[buyer] else MoverKind.FIRST_TIME_BUYER
                self._moves_now.append((buyer, int(hh.area[buyer]), to_area, int(mk)))
                hh.area[buyer] = to_area
                hh.fresh[buyer] = False
            else:
                if occupant >= 0 and occupant == seller:
                    hh.residence[seller] = -1
                    dw.occupant[d] = -1
                    dw.lease[d] = 0
                if kind == BuyerKind.OVERSEAS:
                    self._moves_now.append((buyer, -1, to_area, int(MoverKind.OVERSEAS_INVESTOR)))
                else:
                    self._moves_now.append((buyer, int(hh.area[buyer]), to_area, int(MoverKind.LOCAL_INVESTOR)))
            self._deals_now.append((self.month, to_area, price, int(kind), buyer, seller, d, ratio))

    def _rehouse(self) -> None:
        res = resident_mask(self.hh.kind)
        self._house(np.flatnonzero(res & (self.hh.residence < 0)))

    def _house(self, ids: np.ndarray, rng: np.random.Generator | None = None) -> None:
        rng = self.rng if rng is None else rng
        hh, dw = self.hh, self.dw
        if ids.size == 0:
            return
        vacant = np.flatnonzero(dw.occupant < 0)
        pairs = allocate_rentals(ids, hh.income[ids], vacant, dw.rent[vacant], rng)
        if not pairs:
            return
        who = np.array([p[0] for p in pairs], dtype=np.int64)
        where = np.array([p[1] for p in pairs], dtype=np.int64)
        dw.occupant[where] = who
        hh.residence[who] = where
        own = dw.owner[where] == who
        dw.lease[where] = np.where(own, 0, contract_length(rng, who.size))
        fresh = hh.fresh[who]
        for h, d in zip(who[fresh].tolist(), where[fresh].tolist()):
            self._moves_now.append((h, int(hh.area[h]), int(dw.area[d]), int(MoverKind.NEW_RENTER)))
        hh.area[who] = dw.area[where]
        hh.fresh[who] = False

    def _update_kinds(self) -> None:
        hh, dw = self.hh, self.dw
        res = resident_mask(hh.kind)
        owned = np.bincount(dw.owner, minlength=len(hh))
        in_own = np.zeros(len(hh), dtype=bool)
        housed = np.flatnonzero(hh.residence >= 0)
        in_own[housed] = dw.owner[hh.residence[housed]] == housed
        kind = np.where(in_own, np.where(owned > 1, HouseholdKind.LOCAL_INVESTOR, HouseholdKind.OWNER_OCCUPIER),
                        np.where(owned > 0, HouseholdKind.LOCAL_INVESTOR, HouseholdKind.RENTER))
        hh.kind = np.where(res, kind, hh.kind).astype(np.int64)

    # indicators ----------------------------------------------------------------
    def _indicators(self, p_list: np.ndarray, bids: dict) -> None:
        n = self.scenario.n_areas
        deals = np.array(self._deals_now, dtype=DEAL_DTYPE)
        self.deal_log.append(deals)
        for mv in self._moves_now:
            self.move_log.append((self.month,) + mv)
        prices, areas, ratios = deals["price"], deals["area"], deals["sold_to_list"]
        carried = prices.size == 0
        if not carried:
            self.last_median = float(np.median(prices))
            self.last_mean = float(prices.mean())
            self.last_ratio = float(ratios.mean())
        counts = np.bincount(areas, minlength=n)
        area_carried = counts == 0
        if prices.size:
            order = np.lexsort((prices, areas))
            sp = prices[order]
            start = np.concatenate([[0], np.cumsum(counts)[:-1]])
            have = np.flatnonzero(~area_carried)
            lo = start[have] + (counts[have] - 1) // 2
            hi = start[have] + counts[have] // 2
            self.area_median[have] = 0.5 * (sp[lo] + sp[hi])
        self.recent.append((areas, prices, ratios))
        all_p = np.concatenate([r[1] for r in self.recent])
        hpi = float(np.median(all_p)) if all_p.size else (self.hpi_hist[-1] if self.hpi_hist else self.hpi0)
        self.hpi_hist.append(hpi)
        all_a = np.concatenate([r[0] for r in self.recent])
        all_r = np.concatenate([r[2] for r in self.recent])
        rc = np.bincount(all_a, minlength=n)
        rs = np.bincount(all_a, all_r, minlength=n)
        have = rc > 0
        self.area_s[have] = rs[have] / rc[have]

        dw = self.dw
        n_dw = np.bincount(dw.area, minlength=n)
        n_list = np.bincount(dw.area[dw.listed], minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.listing_fraction = np.where(n_dw > 0, n_list / np.maximum(n_dw, 1), 0.0)
        res = resident_mask(self.hh.kind)
        self.rows.append({
            "month": self.month,
            "region_median": self.last_median,
            "region_mean": self.last_mean,
            "hpi": hpi,
            "sold_to_list": self.last_ratio,
            "n_deals": int(prices.size),
            "n_listings": int(dw.listed.sum()),
            "n_bids": int(bids["amount"].size),
            "households": int(res.sum()),
            "dwellings": len(dw),
            "unhoused": int((res & (self.hh.residence < 0)).sum()),
            "carried": carried,
            "area_median": self.area_median.copy(),
            "area_listing_fraction": self.listing_fraction.copy(),
            "area_sold_to_list": self.area_s.copy(),
            "area_deals": counts,
            "listing_probability": np.asarray(p_list, dtype=float).copy(),
            "area_carried": area_carried,
            "area_households": np.bincount(self.hh.area[res], minlength=n),
        })

    # output ----------------------------------------------------------------------
    def trace(self, meta: dict | None = None) -> SimulationTrace:
        n = self.scenario.n_areas
        rows = self.rows

        def col(k, dt=float):
            return np.array([r[k] for r in rows], dtype=dt)

        def mat(k, dt=float):
            return np.array([r[k] for r in rows], dtype=dt).reshape(len(rows), n)

        moves = np.array(self.move_log, dtype=MOVE_DTYPE) if self.move_log else np.zeros(0, MOVE_DTYPE)
        deals = np.concatenate(self.deal_log) if self.deal_log else np.zeros(0, DEAL_DTYPE)
        return SimulationTrace(
            month=col("month", np.int64),
            region_median=col("region_median"),
            region_mean=col("region_mean"),
            hpi=col("hpi"),
            sold_to_list=col("sold_to_list"),
            n_deals=col("n_deals", np.int64),
            n_listings=col("n_listings", np.int64),
            n_bids=col("n_bids", np.int64),
            households=col("households", np.int64),
            dwellings=col("dwellings", np.int64),
            unhoused=col("unhoused", np.int64),
            carried=col("carried", bool),
            area_median=mat("area_median"),
            area_listing_fraction=mat("area_listing_fraction"),
            area_sold_to_list=mat("area_sold_to_list"),
            area_deals=mat("area_deals", np.int64),
            listing_probability=mat("listing_probability"),
            area_carried=mat("area_carried", bool),
            area_households=mat("area_households", np.int64),
            deals=deals,
            moves=moves,
            area_names=self.scenario.area_names,
            meta=dict(meta or {}),
        )

    # checks ----------------------------------------------------------------------
    def check_invariants(self, rel_tol: float = 1e-6) -> None:
        """Raise :class:`ConservationError` when ownership, residence or money breaks."""
        hh, dw = self.hh, self.dw
        nh = len(hh)
        if ((dw.owner < 0) | (dw.owner >= nh)).any():
            raise ConservationError("dwelling without a valid owner")
        res = resident_mask(hh.kind)
        if (hh.residence[~res] >= 0).any():
            raise ConservationError("overseas or developer household resides somewhere")
        if (hh.residence[res] < 0).any():
            raise ConservationError(f"{int((hh.residence[res] < 0).sum())} resident households unhoused")
        occ = np.flatnonzero(dw.occupant >= 0)
        if (hh.residence[dw.occupant[occ]] != occ).any():
            raise ConservationError("occupant and residence disagree")
        housed = np.flatnonzero(hh.residence >= 0)
        if (dw.occupant[hh.residence[housed]] != housed).any():
            raise ConservationError("residence and occupant disagree")
        if np.unique(hh.residence[housed]).size != housed.size:
            raise ConservationError("two households share a dwelling")
        for led in self.ledgers:
            if abs(led.residual) > rel_tol * led.scale:
                raise ConservationError(f"ledger off by {led.residual} at step {led.month}")


# --------------------------------------------------------------------------
# construction


def behavior_constants(scenario: Scenario, base: BehaviorConstants | None = None) -> BehaviorConstants:
    from dataclasses import replace

    base = BehaviorConstants() if base is None else base
    known = set(BehaviorConstants.__dataclass_fields__)
    overrides = {k: v for k, v in scenario.constants.items() if k in known}
    return replace(base, **overrides)


def initialize_world(scenario: Scenario, seed: int, consts: BehaviorConstants | None = None,
                     hold_after_split: bool = True) -> World:
    """Build the month-0 world: dwellings, owners, renters, mortgages."""
    exo = scenario.exogenous_held(None) if hold_after_split else {
        k: np.asarray(v, dtype=float) for k, v in scenario.exogenous.items()}
    world = World(scenario, seed, behavior_constants(scenario, consts), exo)
    rng = substream(seed, "init")
    n_h, n_d = world.target_counts(0)
    if n_h > n_d:
        raise InfeasibleScenario(f"{n_h} households but only {n_d} dwellings")
    w = scenario.population_weights
    n_areas = scenario.n_areas
    hh, dw = world.hh, world.dw

    hh.append(1, kind=int(HouseholdKind.DEVELOPER), income=0.0)

    per_area = apportion(n_d, w)
    areas = np.repeat(np.arange(n_areas), per_area)
    world.new_dwellings(areas, rng=rng)
    dw.last_sale[:] = dw.quality
    n_own = min(int(round(scenario.owner_share * n_h)), n_h)
    owners_per_area = np.minimum(apportion(n_own, w), per_area)

    # owner-occupiers, matched assortatively on income and quality
    start = np.concatenate([[0], np.cumsum(per_area)])
    owner_dw, owner_area = [], []
    for a in range(n_areas):
        k = int(owners_per_area[a])
        if k == 0:
            continue
        block = np.arange(start[a], start[a + 1])
        chosen = rng.choice(block, size=k, replace=False)
        owner_dw.append(chosen[np.argsort(dw.quality[chosen], kind="stable")])
        owner_area.append(np.full(k, a))
    owner_dw = np.concatenate(owner_dw) if owner_dw else np.zeros(0, dtype=np.int64)
    owner_area = np.concatenate(owner_area) if owner_area else np.zeros(0, dtype=np.int64)
    income = world.sample_incomes(owner_area, rng)
    for a in np.unique(owner_area):
        sel = np.flatnonzero(owner_area == a)
        income[sel] = np.sort(income[sel])
    owners = world.new_households(owner_area, rng=rng, income=income, kind=int(HouseholdKind.OWNER_OCCUPIER))
    dw.owner[owner_dw] = owners
    dw.occupant[owner_dw] = owners
    hh.residence[owners] = owner_dw

    # existing mortgages on owner-occupied homes
    r = world.bank.rate(0) / 12.0
    months = world.bank.mortgage_months
    cap = annuity_principal(world.bank.servicing_ratio * hh.income[owners], r, months)
    principal = np.minimum(0.8 * dw.quality[owner_dw], cap)
    elapsed = rng.integers(0, months, owners.size)
    dw.m_balance[owner_dw] = remaining_balance(principal, r, months, elapsed)
    dw.m_payment[owner_dw] = annuity_payment(principal, r, months)
    dw.m_rate[owner_dw] = r
    dw.m_left[owner_dw] = months - elapsed

    # the rest of the stock belongs to owner-occupiers, weighted by income
    rest = np.flatnonzero(dw.owner == DEVELOPER)
    if owners.size and rest.size:
        p = hh.income[owners] / hh.income[owners].sum()
        dw.owner[rest] = rng.choice(owners, size=rest.size, p=p)

    # renters: weighted-random local area, then the rental market
    n_rent = n_h - owners.size
    if n_rent > 0:
        rent_area = rng.choice(n_areas, size=n_rent, p=w)
        renters = world.new_households(rent_area, rng=rng)
        world._moves_now = []
        world._house(renters, rng)
        occupied = hh.residence[renters]
        housed = occupied >= 0
        dw.lease[occupied[housed]] = rng.integers(1, 19, int(housed.sum()))
    world._update_kinds()

    for a in range(n_areas):
        q = dw.quality[dw.area == a]
        if q.size:
            world.area_median[a] = float(np.median(q))
    if len(dw):
        world.hpi0 = float(np.median(dw.quality))
    world.last_median = world.last_mean = world.hpi0
    world.check_invariants()
    return world


def run_world(world: World, params: ParameterVector, months: int | None = None) -> World:
    steps = world.scenario.equilibration + (world.scenario.months if months is None else months)
    if steps > len(world.exo["households"]):
        raise ValueError("months exceed the scenario horizon")
    while world.t < steps:
        world.step(params)
    return world


def run(scenario: Scenario, params: ParameterVector, months: int | None = None, seed: int = 0,
        consts: BehaviorConstants | None = None, hold_after_split: bool = True) -> SimulationTrace:
    """Burn in, then simulate ``months`` recorded months; the trace excludes burn-in."""
    months = scenario.months if months is None else months
    if months > scenario.months:
        raise ValueError(f"months={months} exceeds the scenario's {scenario.months}")
    world = initialize_world(scenario, seed, consts, hold_after_split)
    run_world(world, params, months)
    meta = {"seed": int(seed), "params": params.as_dict(), "scenario": scenario.fingerprint()}
    return world.trace(meta).recorded(0)
