"""Agent records and their accounting rules.

The simulation engine stores agents column-wise in :mod:`housing_abm.world`;
the dataclasses here are the record view of one agent and carry the scalar
reference versions of the accounting rules. The engine's vectorised code is
tested against these.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class HouseholdKind(IntEnum):
    OWNER_OCCUPIER = 0
    RENTER = 1
    LOCAL_INVESTOR = 2
    OVERSEAS = 3
    #: Pool that owns newly built dwellings until their first sale.
    DEVELOPER = 4


class Occupancy(IntEnum):
    OWNER_OCCUPIED = 0
    RENTED = 1
    VACANT = 2


class DwellingState(IntEnum):
    OWNER_OCCUPIED = 0
    RENTED = 1
    VACANT = 2
    LISTED_FOR_SALE = 3


# --------------------------------------------------------------------------
# tax


@dataclass(frozen=True)
class TaxSchedule:
    """Progressive marginal schedule on annual income.

    ``thresholds[k]`` is where ``rates[k]`` starts applying.
    """

    thresholds: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        if len(self.thresholds) != len(self.rates):
            raise ValueError("thresholds and rates must have equal length")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValueError("thresholds must be ascending")
        if list(self.rates) != sorted(self.rates):
            raise ValueError("rates must be non-decreasing")


TAX_SCHEDULES = {
    "2006": TaxSchedule((0, 6_000, 25_000, 75_000, 150_000), (0.0, 0.15, 0.30, 0.40, 0.45)),
    "2011": TaxSchedule((0, 6_000, 37_000, 80_000, 180_000), (0.0, 0.15, 0.30, 0.37, 0.45)),
    "2016": TaxSchedule((0, 18_200, 37_000, 87_000, 180_000), (0.0, 0.19, 0.325, 0.37, 0.45)),
}


def income_tax(income: float, schedule: TaxSchedule) -> float:
    """Annual tax on annual ``income`` under ``schedule``."""
    return float(income_tax_vec(np.asarray([income], dtype=float), schedule)[0])


def income_tax_vec(income: np.ndarray, schedule: TaxSchedule) -> np.ndarray:
    thr = np.asarray(schedule.thresholds, dtype=float)
    rates = np.asarray(schedule.rates, dtype=float)
    upper = np.append(thr[1:], np.inf)
    x = np.asarray(income, dtype=float)[..., None]
    slab = np.clip(x, thr, upper) - thr
    return slab @ rates


# --------------------------------------------------------------------------
# mortgages


def annuity_payment(principal, monthly_rate, n_months):
    """Level monthly payment that amortises ``principal`` over ``n_months``."""
    principal = np.asarray(principal, dtype=float)
    r = np.asarray(monthly_rate, dtype=float)
    n = np.asarray(n_months, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        pay = np.where(r > 0, principal * r / -np.expm1(-n * np.log1p(r)), principal / n)
    return pay if pay.ndim else float(pay)


def annuity_principal(payment, monthly_rate, n_months):
    """Principal whose level payment over ``n_months`` is ``payment``."""
    payment = np.asarray(payment, dtype=float)
    r = np.asarray(monthly_rate, dtype=float)
    n = np.asarray(n_months, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(r > 0, payment * -np.expm1(-n * np.log1p(r)) / r, payment * n)
    return p if p.ndim else float(p)


def remaining_balance(principal, monthly_rate, n_months, k):
    """Closed-form outstanding balance after ``k`` level payments."""
    pay = annuity_payment(principal, monthly_rate, n_months)
    r = np.asarray(monthly_rate, dtype=float)
    growth = np.expm1(np.asarray(k, dtype=float) * np.log1p(r))
    with np.errstate(divide="ignore", invalid="ignore"):
        bal = np.where(r > 0, principal * (1.0 + growth) - pay * growth / r, principal - pay * k)
    bal = np.maximum(bal, 0.0)
    return bal if bal.ndim else float(bal)


@dataclass
class Mortgage:
    borrower: int
    principal: float
    annual_rate: float
    remaining_months: int
    monthly_payment: float
    balance: float = field(default=-1.0)

    def __post_init__(self):
        if self.balance < 0:
            self.balance = self.principal

    @classmethod
    def originate(cls, borrower: int, principal: float, annual_rate: float, months: int = 360) -> "Mortgage":
        pay = annuity_payment(principal, annual_rate / 12.0, months)
        return cls(borrower, principal, annual_rate, months, pay)

    def pay_month(self) -> tuple[float, float]:
        """Apply one payment; returns ``(interest, principal_repaid)``."""
        if self.remaining_months <= 0:
            return 0.0, 0.0
        interest = self.balance * self.annual_rate / 12.0
        repaid = self.monthly_payment - interest
        self.remaining_months -= 1
        if self.remaining_months == 0:
            repaid = self.balance
        self.balance -= repaid
        return interest, repaid


@dataclass(frozen=True)
class RentalContract:
    tenant: int
    dwelling: int
    rent: float
    remaining_months: int


# --------------------------------------------------------------------------
# bank and household economics


@dataclass(frozen=True)
class Bank:
    """Exogenous financial conditions and lending rules.

    ``mortgage_rates`` is the annual rate per simulated month (burn-in
    included). The affordability cap is the annuity principal whose payment
    equals ``servicing_ratio`` of monthly income, net of payments already owed.
    """

    mortgage_rates: np.ndarray
    tax: TaxSchedule = TAX_SCHEDULES["2016"]
    ltv_range: tuple[float, float] = (0.7, 0.9)
    mortgage_months: int = 360
    servicing_ratio: float = 0.30
    stamp_duty: float = 0.025
    purchase_fees: float = 0.025
    downshift_ratio: float = 0.6

    def rate(self, month: int) -> float:
        rates = self.mortgage_rates
        return float(rates[min(max(month, 0), len(rates) - 1)])

    @property
    def transaction_cost(self) -> float:
        return self.stamp_duty + self.purchase_fees


@dataclass(frozen=True)
class Economy:
    """Household-side external constants (monthly step)."""

    income_consumption: float = 0.60
    liquid_consumption: float = 0.025  # per year
    house_tax: float = 0.017  # per year, on dwelling valuation
    house_care_range: tuple[float, float] = (0.02, 0.03)  # per year
    income_growth_range: tuple[float, float] = (1.001, 1.003)  # per month


@dataclass
class Household:
    id: int
    monthly_income: float
    liquid_cash: float
    kind: HouseholdKind = HouseholdKind.RENTER
    owned: set[int] = field(default_factory=set)
    residence: int | None = None
    months_since_last_sale: int = -1
    months_in_stress: int = 0
    income_growth_rate: float = 1.002
    house_care: float = 0.025
    area: int = 0


@dataclass
class Dwelling:
    id: int
    area: int
    quality: float
    owner: int
    state: DwellingState = DwellingState.VACANT
    months_on_market: int = 0
    last_sale_price: float | None = None
    rent: float = 0.0


def offer_loan_vec(bank: Bank, income, bid, month: int, ltv_sample, existing_payment=0.0) -> np.ndarray:
    income = np.asarray(income, dtype=float)
    bid = np.asarray(bid, dtype=float)
    capacity = np.maximum(bank.servicing_ratio * income - existing_payment, 0.0)
    cap = annuity_principal(capacity, bank.rate(month) / 12.0, bank.mortgage_months)
    offer = np.minimum(np.asarray(ltv_sample) * bid, cap)
    return np.where((bid > 0) & (income > 0), offer, 0.0)


def offer_loan(
    bank: Bank,
    h: Household,
    bid: float,
    month: int,
    ltv_sample: float,
    existing_payment: float = 0.0,
) -> float:
    """Loan the bank is willing to extend against ``bid``.

    ``min(ltv_sample * bid, cap)``, where ``cap`` is the principal serviceable
    with ``servicing_ratio * income - existing_payment`` per month at the
    current mortgage rate over the standard term. ``ltv_sample`` is drawn by
    the caller from ``bank.ltv_range``.
    """
    return float(offer_loan_vec(bank, h.monthly_income, bid, month, ltv_sample, existing_payment))


def accepts_loan(bank: Bank, offer: float, bid: float) -> bool:
    return offer >= bank.downshift_ratio * bid


def deposit_required(bank: Bank, offer: float, bid: float) -> float:
    """Cash needed up front: the unfinanced part of ``bid`` plus duty and fees."""
    return max(bid - offer, 0.0) + bank.transaction_cost * bid


def cashflow_components(
    h: Household,
    bank: Bank,
    month: int,
    economy: Economy = Economy(),
    *,
    rent_paid: float = 0.0,
    rent_received: float = 0.0,
    mortgage_payment: float = 0.0,
    owned_value: float = 0.0,
) -> dict[str, float]:
    """Monthly money flows of one household.

    Non-housing consumption is taken from what is left of after-tax income
    once housing costs are paid, floored at zero. Overseas and developer
    households earn and consume nothing; they still pay upkeep on what they
    own and collect rent. The developer only collects rent on unsold stock.
    """
    resident = h.kind not in (HouseholdKind.OVERSEAS, HouseholdKind.DEVELOPER)
    if h.kind == HouseholdKind.DEVELOPER:
        flows = dict.fromkeys(
            ("income", "tax", "consumption", "liquid_consumption", "maintenance", "house_tax",
             "mortgage", "rent_paid"), 0.0)
        flows["rent_received"] = rent_received
        return flows
    income = h.monthly_income if resident else 0.0
    tax = income_tax(12.0 * income, bank.tax) / 12.0 if resident else 0.0
    maintenance = h.house_care / 12.0 * owned_value
    house_tax = economy.house_tax / 12.0 * owned_value
    disposable = income - tax + rent_received - rent_paid - mortgage_payment - maintenance - house_tax
    consumption = economy.income_consumption * max(disposable, 0.0) if resident else 0.0
    liquid_cons = economy.liquid_consumption / 12.0 * max(h.liquid_cash, 0.0) if resident else 0.0
    return {
        "income": income,
        "tax": tax,
        "consumption": consumption,
        "liquid_consumption": liquid_cons,
        "maintenance": maintenance,
        "house_tax": house_tax,
        "mortgage": mortgage_payment,
        "rent_paid": rent_paid,
        "rent_received": rent_received,
    }


def net_cashflow(flows: dict[str, float]) -> float:
    return (
        flows["income"] + flows["rent_received"]
        - flows["tax"] - flows["consumption"] - flows["liquid_consumption"]
        - flows["maintenance"] - flows["house_tax"] - flows["mortgage"] - flows["rent_paid"]
    )


def monthly_cashflow(h: Household, bank: Bank, month: int, economy: Economy = Economy(), **housing) -> Household:
    """Return ``h`` after one month of income, costs and income growth.

    Keyword arguments are the household's housing flows for the month
    (``rent_paid``, ``rent_received``, ``mortgage_payment``, ``owned_value``).
    A negative balance is a valid, stressed state and increments
    ``months_in_stress``; a non-negative one resets it.
    """
    flows = cashflow_components(h, bank, month, economy, **housing)
    out = dataclasses.replace(h, owned=set(h.owned))
    out.liquid_cash = h.liquid_cash + net_cashflow(flows)
    if h.kind != HouseholdKind.DEVELOPER:
        out.monthly_income = h.monthly_income * h.income_growth_rate
        out.months_in_stress = h.months_in_stress + 1 if out.liquid_cash < 0 else 0
    return out
