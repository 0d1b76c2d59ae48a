import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housing_abm.market import Bid, Listing, allocate_rentals, contract_length, match, pick_rental


def greedy_oracle(bids, listings):
    """Highest bid first takes the dearest affordable listing not its own."""
    order_b = sorted(bids, key=lambda b: (-b.amount, b.bidder))
    order_l = sorted(listings, key=lambda x: (-x.price, x.dwelling))
    taken, deals = set(), []
    for b in order_b:
        for x in order_l:
            if x.dwelling in taken or x.price > b.amount or x.seller == b.bidder:
                continue
            taken.add(x.dwelling)
            deals.append((b.bidder, x.dwelling))
            break
    return deals


def test_two_by_two():
    bids = [Bid(1, 500.0), Bid(2, 300.0)]
    listings = [Listing(10, 400.0, seller=7), Listing(11, 250.0, seller=8)]
    deals, rb, rl = match(bids, listings, 1.0, np.random.default_rng(0))
    assert [(d.bidder, d.dwelling) for d in deals] == [(1, 10), (2, 11)]
    assert deals[0].price == 400.0 and deals[0].bid == 500.0
    assert not rb and not rl


def test_no_listings():
    deals, rb, rl = match([Bid(1, 5.0)], [], 1.0, np.random.default_rng(0))
    assert deals == [] and len(rb) == 1 and rl == []


def test_unsold_listing_ages():
    x = Listing(1, 1e6, months_on_market=2)
    _, _, rl = match([Bid(1, 10.0)], [x], 1.0, np.random.default_rng(0))
    assert rl[0].months_on_market == 3


def test_zero_deal_probability():
    deals, rb, rl = match([Bid(1, 500.0)], [Listing(1, 100.0)], 0.0, np.random.default_rng(0))
    assert deals == [] and len(rb) == 1 and len(rl) == 1


def test_viewed_set_restricts():
    bids = [Bid(1, 500.0, viewed=frozenset({11}))]
    listings = [Listing(10, 400.0), Listing(11, 100.0)]
    deals, _, _ = match(bids, listings, 1.0, np.random.default_rng(0))
    assert [(d.bidder, d.dwelling) for d in deals] == [(1, 11)]


def test_invisible_area_is_skipped():
    pview = np.zeros((2, 2, 2))
    pview[0, 0, 0] = 1.0
    bids = [Bid(1, 500.0, area=0, view_class=0)]
    listings = [Listing(10, 400.0, area=1), Listing(11, 100.0, area=0)]
    deals, _, _ = match(bids, listings, 1.0, np.random.default_rng(0), pview=pview)
    assert deals[0].dwelling == 11


@st.composite
def market_instances(draw):
    nb = draw(st.integers(0, 5))
    nl = draw(st.integers(0, 5))
    amounts = st.integers(1, 20).map(float)
    bids = [Bid(i, draw(amounts)) for i in range(nb)]
    listings = [Listing(100 + j, draw(amounts), seller=draw(st.integers(-1, 6))) for j in range(nl)]
    return bids, listings


@settings(max_examples=1000, deadline=None)
@given(market_instances(), st.integers(0, 2**32 - 1))
def test_matches_greedy_oracle(case, seed):
    bids, listings = case
    expected = greedy_oracle(bids, listings)
    deals, rb, rl = match(bids, listings, 1.0, np.random.default_rng(seed), alpha=1.0)
    assert [(d.bidder, d.dwelling) for d in deals] == expected
    assert len({d.dwelling for d in deals}) == len(deals)
    assert len({d.bidder for d in deals}) == len(deals)
    assert len(deals) + len(rb) == len(bids)
    assert len(deals) + len(rl) == len(listings)
    assert all(d.price <= d.bid for d in deals)


@settings(max_examples=200, deadline=None)
@given(market_instances(), st.randoms(use_true_random=False))
def test_input_order_irrelevant(case, rnd):
    bids, listings = case
    a, _, _ = match(list(bids), [Listing(x.dwelling, x.price, seller=x.seller) for x in listings],
                    1.0, np.random.default_rng(3), alpha=1.0)
    sb, sl = list(bids), [Listing(x.dwelling, x.price, seller=x.seller) for x in listings]
    rnd.shuffle(sb)
    rnd.shuffle(sl)
    b, _, _ = match(sb, sl, 1.0, np.random.default_rng(3), alpha=1.0)
    assert a == b


@settings(max_examples=200, deadline=None)
@given(market_instances(), st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
def test_bounded_choice_never_double_sells(case, alpha, p_m, seed):
    bids, listings = case
    deals, rb, rl = match(bids, listings, p_m, np.random.default_rng(seed), alpha=alpha)
    assert len({d.dwelling for d in deals}) == len(deals)
    assert all(d.price <= d.bid for d in deals)
    assert len(deals) + len(rl) == len(listings)


RENTS = [900.0, 2500.0, 4000.0]


def test_pick_rental_examples():
    rng = np.random.default_rng(0)
    assert pick_rental(10_000.0, RENTS, rng) == 1
    assert pick_rental(1e6, RENTS, rng) == 2
    assert pick_rental(100.0, RENTS, rng) == 0
    assert pick_rental(100.0, [], rng) is None


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e5), st.lists(st.floats(1, 1e4), min_size=1, max_size=12), st.integers(0, 100))
def test_pick_rental_band_or_fallback(income, rents, seed):
    rents = sorted(rents)
    k = pick_rental(income, rents, np.random.default_rng(seed))
    in_band = [r for r in rents if 0.1 * income <= r <= 0.3 * income]
    if in_band:
        assert 0.1 * income <= rents[k] <= 0.3 * income
    elif rents[0] < 0.1 * income:
        assert rents[k] == max(r for r in rents if r < 0.1 * income)
    else:
        assert k == 0


def test_allocate_rentals_houses_everyone_possible():
    out = allocate_rentals([1, 2, 3], [10_000.0, 100.0, 1e6], [50, 51], [2500.0, 900.0], np.random.default_rng(0))
    assert out == [(1, 50), (2, 51)]


def test_contract_lengths():
    x = contract_length(np.random.default_rng(0), 5000)
    assert x.min() == 6 and x.max() == 18
