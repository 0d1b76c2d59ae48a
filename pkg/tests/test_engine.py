from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from housing_abm.behavior import VIEW_LOCAL, VIEW_UNIFORM, ParameterVector
from housing_abm.engine import (
    OVERSEAS_ID_BASE, InfeasibleScenario, StepLedger, initialize_world, resident_mask, run, run_world,
)
from housing_abm.entities import HouseholdKind
from housing_abm.scenario import generate_synthetic_scenario

P = ParameterVector(h=-0.11, beta=-1.03, alpha=0.59)


def flat_scenario(n_areas=2, households=1e6, scale=100.0, months=6, **kw):
    s = generate_synthetic_scenario(8, n_areas, months, scale=scale, **kw)
    exo = dict(s.exogenous)
    exo["households"] = np.full(s.horizon, households)
    exo["dwellings"] = np.full(s.horizon, 1.03 * households)
    return replace(s, exogenous=exo)


def test_agent_count_scales():
    w = initialize_world(flat_scenario(households=1e6, scale=100.0), 0)
    assert w.n_residents() == 10_000


def test_initial_area_split():
    s = replace(flat_scenario(households=2e5, scale=40.0), population_weights=np.array([0.6, 0.4]))
    w = initialize_world(s, 1)
    res = resident_mask(w.hh.kind)
    counts = np.bincount(w.hh.area[res], minlength=2)
    assert stats.chisquare(counts, counts.sum() * np.array([0.6, 0.4])).pvalue > 0.001


def test_singleton_everyone_in_area_zero():
    s = generate_synthetic_scenario(0, 1, 6, topology="singleton", scale=2000.0)
    w = run_world(initialize_world(s, 0), P)
    assert (w.hh.area == 0).all() and (w.dw.area == 0).all()


def test_seed_determinism(tiny_scenario):
    a = run(tiny_scenario, P, seed=4)
    b = run(tiny_scenario, P, seed=4)
    c = run(tiny_scenario, P, seed=5)
    assert np.array_equal(a.region_median, b.region_median)
    assert np.array_equal(a.deals, b.deals)
    assert not np.array_equal(a.deals, c.deals)


def test_zero_months(tiny_scenario):
    tr = run(tiny_scenario, P, months=0)
    assert len(tr) == 0


def test_empty_city_steps():
    s = generate_synthetic_scenario(1, 2, 6, households=0.0)
    w = run_world(initialize_world(s, 0), P)
    assert w.n_residents() == 0
    assert len(w.rows) == s.horizon


def test_population_follows_projection(small_scenario):
    w = run_world(initialize_world(small_scenario, 0), P, 6)
    for row, t in zip(w.rows, range(len(w.rows))):
        assert row["households"] == w.target_counts(t)[0]
    assert len(w.dw) == w.target_counts(w.t - 1)[1]


def test_region_median_from_deal_log(small_scenario):
    w = run_world(initialize_world(small_scenario, 2), P, 6)
    for row, deals in zip(w.rows, w.deal_log):
        if deals.size:
            assert row["region_median"] == np.median(deals["price"])
            assert not row["carried"]
        for a in np.unique(deals["area"]):
            assert row["area_median"][a] == np.median(deals["price"][deals["area"] == a])


def test_invariants_every_month(small_scenario):
    w = initialize_world(small_scenario, 3)
    for _ in range(small_scenario.equilibration + 4):
        w.step(P)
        w.check_invariants()


def test_initial_prices_follow_sales(small_scenario):
    w = initialize_world(small_scenario, 0)
    for a in range(small_scenario.n_areas):
        sales = small_scenario.initial_sales(a)
        q = w.dw.quality[w.dw.area == a]
        if sales.size >= 30 and q.size >= 100:
            assert abs(np.median(q) / np.median(sales) - 1) < 0.10


def test_infeasible_scenario():
    s = generate_synthetic_scenario(0, 2, 6)
    exo = dict(s.exogenous)
    exo["dwellings"] = 0.5 * exo["households"]
    with pytest.raises(InfeasibleScenario):
        initialize_world(replace(s, exogenous=exo), 0)


# ------------------------------------------------------------------ settlement


def settle_world():
    s = generate_synthetic_scenario(0, 2, 6, scale=20_000.0)
    w = initialize_world(s, 0)
    w._moves_now = []
    return w


def setup_sale(w, price, mortgage=0.0):
    d = int(np.flatnonzero(w.dw.owner > 0)[0])
    w.dw.price[d] = price
    w.dw.first_list[d] = price
    w.dw.listed[d] = True
    w.dw.m_balance[d] = mortgage
    return d, int(w.dw.owner[d])


def new_buyer(w, cash):
    return int(w.new_households(np.array([0]), kind=int(HouseholdKind.RENTER))[0]), cash


def bids_for(owner, offer=0.0, ltv=0.0, cls=VIEW_LOCAL):
    return {"owner": np.array([owner]), "amount": np.array([1e9]), "offer": np.array([offer]),
            "ltv": np.array([ltv]), "area": np.array([0]), "cls": np.array([cls])}


def test_cash_purchase():
    w = settle_world()
    d, seller = setup_sale(w, 500_000.0)
    buyer, _ = new_buyer(w, 0)
    w.hh.liquid[buyer] = 600_000.0
    seller_before = w.hh.liquid[seller]
    led = StepLedger(0, 0.0)
    w._settle((np.array([0]), np.array([d])), bids_for(buyer), led)
    assert w.hh.liquid[buyer] == pytest.approx(600_000.0 - 500_000.0 * 1.05)
    assert w.hh.liquid[seller] == pytest.approx(seller_before + 500_000.0)
    assert w.dw.owner[d] == buyer and w.hh.residence[buyer] == d


def test_seller_repays_mortgage():
    w = settle_world()
    d, seller = setup_sale(w, 500_000.0, mortgage=200_000.0)
    buyer, _ = new_buyer(w, 0)
    w.hh.liquid[buyer] = 1e6
    before = w.hh.liquid[seller]
    w._settle((np.array([0]), np.array([d])), bids_for(buyer), StepLedger(0, 0.0))
    assert w.hh.liquid[seller] - before == pytest.approx(300_000.0)
    assert w.dw.m_balance[d] == 0.0


def test_mortgaged_purchase():
    w = settle_world()
    d, _ = setup_sale(w, 500_000.0)
    buyer, _ = new_buyer(w, 0)
    w.hh.liquid[buyer] = 200_000.0
    w._settle((np.array([0]), np.array([d])), bids_for(buyer, offer=450_000.0, ltv=0.8), StepLedger(0, 0.0))
    assert w.dw.m_balance[d] == pytest.approx(400_000.0)
    assert w.hh.liquid[buyer] == pytest.approx(200_000.0 - 100_000.0 - 25_000.0)


def test_overseas_purchase():
    w = settle_world()
    d, _ = setup_sale(w, 500_000.0)
    n = len(w.hh)
    w._settle((np.array([0]), np.array([d])), bids_for(OVERSEAS_ID_BASE, cls=VIEW_UNIFORM), StepLedger(0, 0.0))
    assert len(w.hh) == n + 1
    assert w.hh.kind[n] == HouseholdKind.OVERSEAS
    assert w.dw.owner[d] == n
    assert w.hh.liquid[n] == pytest.approx(0.0, abs=1e-6)
    assert w.hh.residence[n] == -1


def test_insufficient_deposit_voids_deal():
    w = settle_world()
    d, seller = setup_sale(w, 500_000.0)
    buyer, _ = new_buyer(w, 0)
    w.hh.liquid[buyer] = 100_000.0
    w._settle((np.array([0]), np.array([d])), bids_for(buyer), StepLedger(0, 0.0))
    assert w.dw.owner[d] == seller and w.dw.listed[d]
    assert w.hh.liquid[buyer] == 100_000.0
    assert w._deals_now == []
