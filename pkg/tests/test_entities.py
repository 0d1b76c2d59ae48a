import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from housing_abm.entities import (
    TAX_SCHEDULES, Bank, Household, HouseholdKind, Mortgage, TaxSchedule, accepts_loan, annuity_payment,
    annuity_principal, cashflow_components, deposit_required, income_tax, monthly_cashflow, offer_loan,
    remaining_balance,
)

TAX = TAX_SCHEDULES["2016"]


def bank(rate=0.0495, months=24):
    return Bank(np.full(months, rate))


def test_tax_schedule_values():
    assert TAX.thresholds == (0, 18_200, 37_000, 87_000, 180_000)
    assert TAX.rates == (0.0, 0.19, 0.325, 0.37, 0.45)


def test_tax_examples():
    assert income_tax(0.0, TAX) == 0.0
    assert income_tax(18_200.0, TAX) == 0.0
    assert income_tax(40_000.0, TAX) == pytest.approx(0.19 * 18_800 + 0.325 * 3_000)
    assert income_tax(40_000.0, TAX) == pytest.approx(4547.0)


def test_owner_cashflow_tax():
    h = Household(1, 10_000.0, 50_000.0, HouseholdKind.OWNER_OCCUPIER)
    flows = cashflow_components(h, bank(), 0)
    assert 12 * flows["tax"] == pytest.approx(32_032.0)


def test_tax_schedule_validation():
    with pytest.raises(ValueError):
        TaxSchedule((0, 10), (0.3, 0.1))


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e7), st.floats(0, 1e6))
def test_tax_monotone_and_bounded(x, dx):
    t0, t1 = income_tax(x, TAX), income_tax(x + dx, TAX)
    assert 0 <= t0 <= 0.45 * x + 1e-9
    assert t1 >= t0 - 1e-9
    # marginal rate never exceeds the top band
    assert t1 - t0 <= 0.45 * dx + 1e-6


def test_stress_counter_increments_and_resets():
    b = bank()
    h = Household(1, 0.0, -10.0, HouseholdKind.RENTER)
    for _ in range(3):
        h = monthly_cashflow(h, b, 0, rent_paid=100.0)
    assert h.months_in_stress == 3
    h.liquid_cash = 1e6
    h = monthly_cashflow(h, b, 0)
    assert h.months_in_stress == 0


def test_zero_income_household():
    h = Household(1, 0.0, 1000.0, HouseholdKind.RENTER)
    f = cashflow_components(h, bank(), 0)
    assert f["income"] == f["tax"] == f["consumption"] == 0.0
    out = monthly_cashflow(h, bank(), 0)
    assert out.liquid_cash == pytest.approx(1000.0 * (1 - 0.025 / 12))


def test_consumption_share_of_disposable():
    h = Household(1, 2_000.0, 0.0, HouseholdKind.RENTER)
    f = cashflow_components(h, bank(), 0, rent_paid=500.0)
    disposable = 2_000.0 - f["tax"] - 500.0
    assert f["consumption"] == pytest.approx(0.6 * disposable)


def test_overseas_and_developer_earn_nothing():
    for kind in (HouseholdKind.OVERSEAS, HouseholdKind.DEVELOPER):
        h = Household(1, 5_000.0, 0.0, kind)
        f = cashflow_components(h, bank(), 0, rent_received=300.0)
        assert f["income"] == 0 and f["consumption"] == 0
        assert f["rent_received"] == 300.0


def test_loan_offer_examples():
    b = bank()
    rich = Household(1, 1e6, 0.0)
    assert offer_loan(b, rich, 1e6, 0, 0.8) == pytest.approx(8e5)
    poor = Household(2, 0.0, 0.0)
    assert offer_loan(b, poor, 1e6, 0, 0.8) == 0.0
    # capped by the annuity principal of 30% of income
    mid = Household(3, 5_000.0, 0.0)
    cap = annuity_principal(1_500.0, 0.0495 / 12, 360)
    assert offer_loan(b, mid, 1e7, 0, 0.9) == pytest.approx(cap)


def test_loan_acceptance_and_deposit():
    b = bank()
    assert accepts_loan(b, 600.0, 1000.0)
    assert not accepts_loan(b, 599.0, 1000.0)
    assert b.transaction_cost == pytest.approx(0.05)
    assert deposit_required(b, 8e5, 1e6) == pytest.approx(2e5 + 5e4)


def test_annuity_roundtrip():
    pay = annuity_payment(3e5, 0.004, 360)
    assert annuity_principal(pay, 0.004, 360) == pytest.approx(3e5, rel=1e-12)
    assert annuity_payment(1200.0, 0.0, 12) == pytest.approx(100.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e3, 2e6), st.floats(0.0, 0.15), st.integers(1, 360))
def test_amortisation_matches_closed_form(principal, rate, months):
    m = Mortgage.originate(0, principal, rate, months)
    interest_total = 0.0
    for k in range(1, months + 1):
        interest, _ = m.pay_month()
        interest_total += interest
        if k % 37 == 0 or k == months:
            assert m.balance == pytest.approx(remaining_balance(principal, rate / 12, months, k), abs=1e-6 * principal)
    assert abs(m.balance) < 1e-6 * principal
    assert m.pay_month() == (0.0, 0.0)
    assert interest_total >= 0
