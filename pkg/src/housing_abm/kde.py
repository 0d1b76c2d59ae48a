"""Gaussian kernel density over sale prices, truncated to positive values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

#: Areas with fewer recent sales than this use the pooled regional density.
MIN_SAMPLES = 30


class EmptySamples(ValueError):
    pass


def scott_factor(n: int, d: int = 1) -> float:
    return float(n) ** (-1.0 / (d + 4))


def scott_bandwidth(samples) -> float:
    """``std(samples, ddof=1) * n ** (-1/5)``."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise EmptySamples("bandwidth needs at least two samples")
    return float(np.std(x, ddof=1) * scott_factor(x.size))


@dataclass(frozen=True)
class PriceDensity:
    """Price KDE with the mass below zero removed and renormalised.

    Sampling draws a data point uniformly and adds kernel noise, redrawing any
    non-positive result.
    """

    samples: np.ndarray
    bandwidth: float
    pooled: bool = False

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def positive_mass(self) -> float:
        return float(np.mean(ndtr(self.samples / self.bandwidth)))

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        idx = np.flatnonzero(x > 0)
        norm = self.n * self.bandwidth * np.sqrt(2 * np.pi) * self.positive_mass
        step = max(1, 2_000_000 // max(self.n, 1))
        for lo in range(0, idx.size, step):
            sel = idx[lo:lo + step]
            z = (x[sel, None] - self.samples[None, :]) / self.bandwidth
            out[sel] = np.exp(-0.5 * z * z).sum(axis=1) / norm
        return out

    def median(self) -> float:
        return float(np.median(self.samples))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = size - filled
            draw = rng.choice(self.samples, size=need) + rng.normal(0.0, self.bandwidth, size=need)
            draw = draw[draw > 0]
            out[filled:filled + draw.size] = draw
            filled += draw.size
        return out


def fit_price_density(samples, pooled: PriceDensity | None = None, min_samples: int = MIN_SAMPLES) -> PriceDensity:
    """Fit a density, substituting ``pooled`` when there are too few samples.

    Raises
    ------
    EmptySamples
        No samples and no pooled fallback.
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < min_samples:
        if pooled is not None:
            return PriceDensity(pooled.samples, pooled.bandwidth, pooled=True)
        if x.size == 0:
            raise EmptySamples("no price samples")
        if x.size < 2 or np.std(x) == 0:
            raise EmptySamples("too few distinct price samples for a bandwidth")
    return PriceDensity(x, scott_bandwidth(x))
