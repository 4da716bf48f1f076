"""Log-returns, normalized returns and volatility.

All moments use the population convention (divisor n).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ingest import PriceSeries


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    delta_t_bins: int
    values: np.ndarray
    mu: float
    sigma: float
    normalized: bool = False
    start: int | None = None  # epoch seconds of the first source bin
    bin_seconds: int | None = None

    def __post_init__(self):
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)


def _moments(values: np.ndarray) -> tuple[float, float]:
    return float(values.mean()), float(values.std(ddof=0))


def from_values(values, delta_t_bins: int = 1) -> ReturnSeries:
    v = np.array(values, dtype=float)
    mu, sigma = _moments(v)
    return ReturnSeries(delta_t_bins, v, mu, sigma)


def log_returns(series: PriceSeries, delta_t_bins: int = 1) -> ReturnSeries:
    prices = np.asarray(series.prices, dtype=float)
    if delta_t_bins < 1:
        raise ValueError("delta_t_bins must be >= 1")
    if len(prices) <= delta_t_bins:
        raise ValueError(f"series of length {len(prices)} too short for lag {delta_t_bins}")
    if np.any(prices <= 0):
        raise ValueError("non-positive price")
    lp = np.log(prices)
    values = lp[delta_t_bins:] - lp[:-delta_t_bins]
    mu, sigma = _moments(values)
    return ReturnSeries(delta_t_bins, values, mu, sigma, False, series.start, series.bin_seconds)


def normalize(returns: ReturnSeries) -> ReturnSeries:
    """Shift and scale to zero mean and unit (population) variance."""
    if returns.normalized:
        return returns
    if not returns.sigma > 0:
        raise DegenerateInputError("cannot normalize a constant series (sigma = 0)")
    values = (returns.values - returns.mu) / returns.sigma
    return replace(returns, values=values, normalized=True)


def volatility(returns: ReturnSeries) -> ReturnSeries:
    """Absolute values; callers are expected to pass normalized returns."""
    values = np.abs(returns.values)
    mu, sigma = _moments(values)
    return replace(returns, values=values, mu=mu, sigma=sigma, normalized=False)
