import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from housing_abm.behavior import (
    BehaviorConstants, NonPositiveDenominator, ParameterVector, bid_price, bid_price_vec, bid_urgency,
    choice_index, choose_listing, heterogeneity, list_price, listing_probability,
    listing_probability_vec, sell_urgency, viewing_probability, viewing_tables,
)
from housing_abm.entities import HouseholdKind
from housing_abm.graph import Topology, build_graph

C = BehaviorConstants()


def test_baseline_constants():
    assert (C.b_h, C.b_l, C.b_s, C.b_d) == (0.1, 1.75, 0.22, -0.01)
    assert (C.phi_b, C.phi_I, C.p_b, C.p_m) == (81.75, 0.80, 0.01, 0.8)
    assert (C.u_stress, C.u_rental, C.n_reference) == (0.2, 0.02, 10)


def test_bid_example():
    b = bid_price(5000.0, ParameterVector(), 0.0495, 0.025, 0.0)
    expected = 81.75 * np.exp(0.8 * np.log(5000.0)) / 0.0745
    assert b == pytest.approx(expected, rel=1e-12)
    assert b == pytest.approx(9.99e5, rel=2e-3)


def test_bid_nonpositive_denominator():
    with pytest.raises(NonPositiveDenominator):
        bid_price(5000.0, ParameterVector(h=1.0), 0.05, 0.0, 0.06)
    v = bid_price_vec(np.array([5000.0]), 1.0, 0.05, 0.0, 0.06, C, 1.0, 1.0)
    assert np.isnan(v[0])


def test_bid_vec_matches_scalar():
    inc = np.array([1000.0, 5000.0, 20000.0])
    v = bid_price_vec(inc, -0.3, 0.05, 0.02, 0.01, C, 1.02, 1.1)
    s = [bid_price(i, ParameterVector(h=-0.3), 0.05, 0.02, 0.01, C, 1.02, 1.1) for i in inc]
    assert np.allclose(v, s, rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(100, 1e5), st.floats(1.01, 3), st.floats(0.01, 0.1), st.floats(-0.02, 0.02))
def test_bid_monotone(income, mult, rate, hpi):
    p = ParameterVector(h=0.3)
    b = bid_price(income, p, rate, 0.02, hpi)
    assert bid_price(income * mult, p, rate, 0.02, hpi) > b
    assert bid_price(income, p, rate * mult, 0.02, hpi) < b
    # positive h with rising prices raises the bid
    assert bid_price(income, p, rate, 0.02, abs(hpi) + 1e-3) > bid_price(income, p, rate, 0.02, 0.0)


def test_list_price_examples():
    assert list_price(1e6, 1.0, 0) == pytest.approx(1.75e6, rel=1e-14)
    assert list_price(1e6, 1.0, 11) / list_price(1e6, 1.0, 0) == pytest.approx(12 ** -0.01, rel=1e-14)
    assert list_price(1e6, 1.0, 0, urgency=2.0) == pytest.approx(0.875e6, rel=1e-14)
    assert list_price(1e6, 0.9, 0) == pytest.approx(1.75e6 * 0.9**0.22, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 200), st.floats(0.5, 1.5))
def test_list_price_decays_with_time(months, s):
    assert list_price(5e5, s, months + 1) < list_price(5e5, s, months)


def test_listing_probability_example():
    f = [0.03, 0.01]
    p = listing_probability_vec(f, -1.0, 0.01)
    assert p[0] == pytest.approx(0.005, abs=1e-15)
    assert p[1] == pytest.approx(0.015, abs=1e-15)
    assert listing_probability(0, ParameterVector(beta=-1.0), f) == pytest.approx(0.005, abs=1e-15)


def test_listing_probability_no_listings():
    assert np.array_equal(listing_probability_vec([0.0, 0.0], 5.0, 0.01), [0.01, 0.01])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(-10, 10))
def test_listing_probability_properties(f, beta):
    p = listing_probability_vec(f, beta, 0.01)
    assert ((p >= 0) & (p <= 1)).all()
    assert np.array_equal(listing_probability_vec(f, 0.0, 0.01), np.full(len(f), 0.01))
    fa = np.asarray(f)
    if fa.mean() > 0 and (p > 0).all():
        # unclipped deviations from the base rate cancel across areas
        assert np.mean(p) == pytest.approx(0.01, abs=1e-12)


def test_viewing_probability_example():
    g = build_graph(Topology.adjacency([(0, 1), (1, 2)]), 3)
    assert viewing_probability(HouseholdKind.RENTER, g, 0, 1, 0.5) == pytest.approx(0.125, abs=1e-15)
    assert viewing_probability(HouseholdKind.LOCAL_INVESTOR, g, 0, 2, 0.5) == 0.5
    t = viewing_tables(g, 0.5)
    assert t[0, 0, 1] == pytest.approx(0.125)
    assert (t[1] == 0.5).all()


def test_choice_distribution():
    rng = np.random.default_rng(0)
    picks = np.array([choose_listing(2, 0.5, rng) for _ in range(40_000)])
    # 0.5 first option, else 0.25 second, else uniform fallback
    p0 = 0.5 + 0.25 * 0.5
    se = np.sqrt(p0 * (1 - p0) / picks.size)
    assert abs(np.mean(picks == 0) - p0) < 4 * se


def test_choice_limits():
    assert choose_listing(0, 0.5, np.random.default_rng(0)) is None
    assert choice_index(5, 1.0, 0.99, 0.99) == 0
    rng = np.random.default_rng(1)
    picks = [choose_listing(4, 0.0, rng) for _ in range(20_000)]
    counts = np.bincount(picks, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.001


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 30), st.floats(0, 1), st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True))
def test_choice_in_range(k, alpha, u1, u2):
    assert 0 <= choice_index(k, alpha, u1, u2) < k


def test_heterogeneity_uniform():
    x = heterogeneity(np.random.default_rng(2), 0.1, 20_000)
    assert x.min() >= 0.95 and x.max() <= 1.05
    assert stats.kstest(x, stats.uniform(0.95, 0.1).cdf).pvalue > 0.001


def test_urgency():
    assert np.array_equal(bid_urgency([-1, 0, 10], 0.02), [1.0, 1.0, 1.2])
    assert sell_urgency(3, 0.2) == pytest.approx(1.6)


def test_parameter_vector():
    p = ParameterVector.parse("h=-0.11,beta=-1.03,alpha=0.59")
    assert p.as_dict() == {"h": -0.11, "beta": -1.03, "alpha": 0.59}
    with pytest.raises(ValueError):
        ParameterVector(alpha=1.5)
    with pytest.raises(ValueError):
        ParameterVector.parse("gamma=1")


def test_constants_scaled():
    c = C.scaled(b_l=2.0, n_reference=1.5)
    assert c.b_l == 3.5 and c.n_reference == 15
    with pytest.raises(KeyError):
        C.scaled(nope=1.0)
