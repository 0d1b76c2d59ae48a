"""Behavioural pricing rules: bids, list prices, listing and viewing odds.

Each rule has a scalar form for direct use and testing and a vectorised
``*_vec`` form that the engine calls once per month over all agents.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from housing_abm.entities import HouseholdKind
from housing_abm.graph import RegionGraph


class NonPositiveDenominator(ArithmeticError):
    """Bid denominator ``mortgage + care - h * hpi_change`` is not positive."""


@dataclass(frozen=True)
class ParameterVector:
    """Calibrated behavioural parameters.

    h : trend-following aptitude, in ``[-1, 1]``
    beta : fear-of-missing-out strength, in ``[-10, 10]``
    alpha : viewing / boundedness strength, in ``[0, 1]``
    """

    h: float = 0.0
    beta: float = 0.0
    alpha: float = 1.0

    BOUNDS = {"h": (-1.0, 1.0), "beta": (-10.0, 10.0), "alpha": (0.0, 1.0)}

    def __post_init__(self):
        for name, (lo, hi) in self.BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def as_dict(self) -> dict[str, float]:
        return {"h": self.h, "beta": self.beta, "alpha": self.alpha}

    @classmethod
    def parse(cls, text: str) -> "ParameterVector":
        """Parse ``"h=-0.11,beta=-1.03,alpha=0.59"`` (missing keys keep defaults)."""
        kw = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, _, value = part.partition("=")
            key = key.strip()
            if key not in cls.BOUNDS:
                raise ValueError(f"unknown parameter {key!r}")
            kw[key] = float(value)
        return cls(**kw)


@dataclass(frozen=True)
class BehaviorConstants:
    b_h: float = 0.1
    b_l: float = 1.75
    b_s: float = 0.22
    b_d: float = -0.01
    phi_b: float = 81.75
    phi_I: float = 0.80
    p_b: float = 0.01
    p_m: float = 0.8
    n_reference: int = 10
    u_stress: float = 0.2
    u_rental: float = 0.02
    #: listed in the baseline table but not wired into any rule
    u_cash: float = 0.2
    #: listings unsold for this many months are withdrawn
    max_months_listed: int = 12
    #: investors keep this many months of income in cash after a purchase
    investor_buffer_months: float = 6.0

    def scaled(self, **factors: float) -> "BehaviorConstants":
        """Copy with the named constants multiplied by the given factors."""
        names = {f.name for f in fields(self)}
        kw = {}
        for k, f in factors.items():
            if k not in names:
                raise KeyError(k)
            v = getattr(self, k) * f
            kw[k] = int(round(v)) if isinstance(getattr(self, k), int) else v
        return replace(self, **kw)


def heterogeneity(rng: np.random.Generator, b_h: float, size=None):
    return rng.uniform(1.0 - b_h / 2.0, 1.0 + b_h / 2.0, size)


def bid_urgency(months_since_last_sale, u_rental: float):
    """1 unless the household sold recently, then ``1 + u_rental * months``."""
    m = np.asarray(months_since_last_sale)
    return np.where(m >= 0, 1.0 + u_rental * np.maximum(m, 0), 1.0)


def sell_urgency(months_in_stress, u_stress: float):
    return 1.0 + u_stress * np.asarray(months_in_stress)


def bid_price(
    income: float,
    params: ParameterVector,
    mortgage_rate: float,
    house_care: float,
    hpi_change: float,
    consts: BehaviorConstants = BehaviorConstants(),
    heterogeneity: float = 1.0,
    urgency: float = 1.0,
) -> float:
    """Desired expenditure of a household with monthly ``income``.

    ``H * U_b * phi_b * I**phi_I / (mortgage_rate + house_care - h * hpi_change)``

    Raises
    ------
    NonPositiveDenominator
        The denominator is zero or negative; the household skips bidding.
    """
    den = mortgage_rate + house_care - params.h * hpi_change
    if den <= 0:
        raise NonPositiveDenominator(den)
    return heterogeneity * urgency * consts.phi_b * income ** consts.phi_I / den


def bid_price_vec(income, h, mortgage_rate, house_care, hpi_change, consts, heterogeneity, urgency):
    """Vectorised :func:`bid_price`; non-positive denominators give NaN."""
    den = mortgage_rate + np.asarray(house_care) - h * hpi_change
    with np.errstate(divide="ignore", invalid="ignore"):
        b = heterogeneity * urgency * consts.phi_b * np.asarray(income, dtype=float) ** consts.phi_I / den
    return np.where(den > 0, b, np.nan)


def list_price(
    reference_price: float,
    sold_to_list: float,
    months_on_market: int,
    consts: BehaviorConstants = BehaviorConstants(),
    heterogeneity: float = 1.0,
    urgency: float = 1.0,
) -> float:
    """``H * b_l * Q * S**b_s * (1 + D)**b_d / U_l``."""
    return float(list_price_vec(reference_price, sold_to_list, months_on_market, consts, heterogeneity, urgency))


def list_price_vec(reference_price, sold_to_list, months_on_market, consts, heterogeneity, urgency):
    return (
        heterogeneity * consts.b_l * np.asarray(reference_price, dtype=float)
        * np.asarray(sold_to_list, dtype=float) ** consts.b_s
        * (1.0 + np.asarray(months_on_market, dtype=float)) ** consts.b_d
        / urgency
    )


def listing_probability_vec(listing_fraction, beta: float, p_b: float) -> np.ndarray:
    """Per-area listing probability from the listed fraction of each area.

    ``p_b + p_b * beta * (f / mean(f) - 1)``, clipped to ``[0, 1]``. With no
    listings anywhere the ratio is undefined and every area gets ``p_b``.
    """
    f = np.asarray(listing_fraction, dtype=float)
    mean = f.mean() if f.size else 0.0
    if mean <= 0:
        return np.full(f.shape, p_b)
    if beta == 0:
        return np.full(f.shape, p_b)
    return np.clip(p_b + p_b * beta * (f / mean - 1.0), 0.0, 1.0)


def listing_probability(area: int, params: ParameterVector, listing_fraction, p_b: float = 0.01) -> float:
    return float(listing_probability_vec(listing_fraction, params.beta, p_b)[area])


#: viewing classes used by the matching kernel
VIEW_LOCAL = 0
VIEW_UNIFORM = 1


def uses_outreach(buyer_kind: HouseholdKind | int) -> bool:
    """Home buyers care about distance; investors and overseas buyers do not."""
    return int(buyer_kind) in (int(HouseholdKind.RENTER), int(HouseholdKind.OWNER_OCCUPIER))


def viewing_probability(buyer_kind, g: RegionGraph, src: int, dst: int, alpha: float) -> float:
    if uses_outreach(buyer_kind):
        return alpha * g.outreach(src, dst) ** 2
    return alpha


def viewing_tables(g: RegionGraph, alpha: float) -> np.ndarray:
    """Viewing probability by ``[class, buyer_area, listing_area]``."""
    out = np.empty((2, g.n, g.n))
    out[VIEW_LOCAL] = alpha * g.outreach_matrix() ** 2
    out[VIEW_UNIFORM] = alpha
    return out


def choose_listing(k: int, alpha: float, rng: np.random.Generator) -> int | None:
    """Pick one of ``k`` price-ordered options (0 = most expensive).

    Options are accepted in turn with probability ``alpha``; if every one is
    passed over the pick is uniform over all ``k``.
    """
    if k <= 0:
        return None
    return choice_index(k, alpha, rng.random(), rng.random())


def choice_index(k: int, alpha: float, u_chain: float, u_fallback: float) -> int:
    """Inverse-CDF form of :func:`choose_listing` from two uniforms."""
    if alpha >= 1.0:
        return 0
    if alpha > 0.0:
        # failures before the first acceptance, geometric on {0, 1, ...}
        with np.errstate(over="ignore", divide="ignore"):
            g = np.floor(np.log1p(-u_chain) / np.log1p(-alpha))
        if g < k:
            return int(g)
    return min(int(u_fallback * k), k - 1)
