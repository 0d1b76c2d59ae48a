"""Monthly matching of bids to listings and rental allocation.

Bids are served from highest to lowest. Each bidder looks at the listings it
can afford and has viewed, ordered from most to least expensive, and picks
one with :func:`housing_abm.behavior.choice_index`; the deal then goes through
with probability ``p_m``. A listing that falls through stays available to
lower bidders in the same month. Equal amounts are ordered by id.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numba
import numpy as np

from housing_abm.rng import hash_uniform


@dataclass
class Bid:
    bidder: int
    amount: float
    viewed: frozenset[int] | None = None  # dwelling ids; None means every listing
    persists_until_cleared: bool = False
    area: int = 0
    view_class: int = 0
    loan: float = 0.0


@dataclass
class Listing:
    dwelling: int
    price: float
    months_on_market: int = 0
    seller: int = -1
    area: int = 0


@dataclass(frozen=True)
class Deal:
    bidder: int
    dwelling: int
    seller: int
    price: float
    bid: float


@numba.njit(cache=True)
def _choose(avail, idx, price, amount, bidder, seller, area, dwelling, k_view, pv_row,
            visible, use_visible, b, key, target):
    """Return the position of the ``target``-th eligible listing, or -(count+1)."""
    count = 0
    n = price.shape[0]
    for pos in range(idx, n):
        if not avail[pos] or seller[pos] == bidder:
            continue
        if use_visible:
            if not visible[b, pos]:
                continue
        else:
            p = pv_row[area[pos]]
            if p < 1.0 and (p <= 0.0 or hash_uniform(key, bidder, dwelling[pos]) >= p):
                continue
        if count == target:
            return pos
        count += 1
    return -(count + 1)


@numba.njit(cache=True)
def match_kernel(bid_amount, bid_owner, bid_area, bid_class, u_chain, u_fallback, u_deal,
                 price, dwelling, seller, list_area, pview, key, alpha, p_m,
                 visible, use_visible):
    """Greedy matching over bids (descending) and listings (descending price).

    Returns ``(bid_pos, listing_pos)`` arrays of the deals made.
    """
    nb = bid_amount.shape[0]
    nl = price.shape[0]
    avail = np.ones(nl, dtype=np.bool_)
    n_avail = nl
    # ascending copy for the affordability search
    neg = -price
    out_b = np.empty(min(nb, nl), dtype=np.int64)
    out_l = np.empty(min(nb, nl), dtype=np.int64)
    n_deals = 0
    last = nl - 1
    if alpha > 0.0 and alpha < 1.0:
        log_q = np.log1p(-alpha)
    else:
        log_q = 0.0
    for b in range(nb):
        if n_avail == 0:
            break
        while last >= 0 and not avail[last]:
            last -= 1
        amount = bid_amount[b]
        if amount < price[last]:
            continue
        start = np.searchsorted(neg, -amount, side="left")
        if start >= nl:
            continue
        bidder = bid_owner[b]
        pv_row = pview[bid_class[b], bid_area[b]]
        if alpha >= 1.0:
            target = 0
        elif alpha > 0.0:
            g = np.floor(np.log1p(-u_chain[b]) / log_q) if log_q < 0.0 else np.inf
            # a tiny alpha can push the draw past any listing count
            target = int(g) if g < nl else nl
        else:
            target = nl  # never reached: go straight to the uniform fallback
        pos = _choose(avail, start, price, amount, bidder, seller, list_area, dwelling,
                      0, pv_row, visible, use_visible, b, key, target)
        if pos < 0:
            count = -pos - 1
            if count == 0:
                continue
            k = int(u_fallback[b] * count)
            if k >= count:
                k = count - 1
            pos = _choose(avail, start, price, amount, bidder, seller, list_area, dwelling,
                          0, pv_row, visible, use_visible, b, key, k)
        if u_deal[b] < p_m:
            avail[pos] = False
            n_avail -= 1
            out_b[n_deals] = b
            out_l[n_deals] = pos
            n_deals += 1
    return out_b[:n_deals], out_l[:n_deals]


def bid_order(amount, owner) -> np.ndarray:
    """Descending by amount, ascending id on ties."""
    return np.lexsort((np.asarray(owner), -np.asarray(amount)))


def listing_order(price, dwelling) -> np.ndarray:
    return np.lexsort((np.asarray(dwelling), -np.asarray(price)))


def match(
    bids: list[Bid],
    listings: list[Listing],
    p_m: float,
    rng: np.random.Generator,
    alpha: float = 1.0,
    pview: np.ndarray | None = None,
) -> tuple[list[Deal], list[Bid], list[Listing]]:
    """Match ``bids`` to ``listings``.

    Visibility comes from each bid's ``viewed`` set when given; otherwise from
    ``pview[bid.view_class, bid.area, listing.area]`` (all visible when
    ``pview`` is None).

    Returns
    -------
    deals, unmatched_bids, unmatched_listings
        Unmatched listings have ``months_on_market`` incremented; both
        residual lists carry over to the next month.
    """
    nb, nl = len(bids), len(listings)
    bo = bid_order([b.amount for b in bids], [b.bidder for b in bids]) if nb else np.zeros(0, int)
    lo = listing_order([x.price for x in listings], [x.dwelling for x in listings]) if nl else np.zeros(0, int)
    sb = [bids[i] for i in bo]
    sl = [listings[i] for i in lo]
    explicit = any(b.viewed is not None for b in sb)
    visible = np.ones((nb, nl), dtype=np.bool_) if explicit else np.ones((1, 1), dtype=np.bool_)
    if explicit:
        for r, b in enumerate(sb):
            if b.viewed is not None:
                visible[r] = [x.dwelling in b.viewed for x in sl]
    n_area = 1 + max([b.area for b in sb] + [x.area for x in sl] + [0])
    pv = np.ones((2, n_area, n_area)) if pview is None else np.asarray(pview, dtype=float)
    u = rng.random((3, nb))
    key = int(rng.integers(0, 2**63 - 1))
    db, dl = match_kernel(
        np.array([b.amount for b in sb], dtype=float),
        np.array([b.bidder for b in sb], dtype=np.int64),
        np.array([b.area for b in sb], dtype=np.int64),
        np.array([b.view_class for b in sb], dtype=np.int64),
        u[0], u[1], u[2],
        np.array([x.price for x in sl], dtype=float),
        np.array([x.dwelling for x in sl], dtype=np.int64),
        np.array([x.seller for x in sl], dtype=np.int64),
        np.array([x.area for x in sl], dtype=np.int64),
        pv, key, float(alpha), float(p_m), visible, explicit,
    )
    deals = [Deal(sb[b].bidder, sl[l].dwelling, sl[l].seller, sl[l].price, sb[b].amount)
             for b, l in zip(db.tolist(), dl.tolist())]
    used_b, used_l = set(db.tolist()), set(dl.tolist())
    rest_b = [b for r, b in enumerate(sb) if r not in used_b]
    rest_l = []
    for r, x in enumerate(sl):
        if r not in used_l:
            x.months_on_market += 1
            rest_l.append(x)
    return deals, rest_b, rest_l


# --------------------------------------------------------------------------
# rentals


def pick_rental(income: float, rents: list[float], rng: np.random.Generator,
                low: float = 0.10, high: float = 0.30) -> int | None:
    """Index into ascending ``rents`` for a renter with monthly ``income``.

    Uniform over rents in ``[low, high] * income``. If that band is empty:
    the dearest rent below it, or, when every rent is above it, the cheapest
    rent. ``None`` only when there is no vacancy at all, so every household
    that can be housed is; a rent above income leaves the tenant stressed.
    """
    if not rents:
        return None
    a = bisect.bisect_left(rents, low * income)
    b = bisect.bisect_right(rents, high * income)
    if b > a:
        return a + int(rng.integers(b - a))
    if a > 0:
        return a - 1
    return 0


def allocate_rentals(renter_ids, renter_incomes, vacancy_ids, vacancy_rents, rng: np.random.Generator,
                     low: float = 0.10, high: float = 0.30) -> list[tuple[int, int]]:
    """Assign vacant rentals to renters in the given order.

    Returns ``(renter_id, dwelling_id)`` pairs; renters left out stay
    unhoused this month.
    """
    order = np.lexsort((np.asarray(vacancy_ids), np.asarray(vacancy_rents, dtype=float)))
    rents = [float(vacancy_rents[i]) for i in order]
    ids = [int(vacancy_ids[i]) for i in order]
    out = []
    for rid, inc in zip(renter_ids, renter_incomes):
        k = pick_rental(float(inc), rents, rng, low, high)
        if k is None:
            continue
        out.append((int(rid), ids.pop(k)))
        rents.pop(k)
        if not rents:
            break
    return out


def contract_length(rng: np.random.Generator, size=None):
    return rng.integers(6, 19, size)
