"""Seeded synthetic price histories for demos and tests."""

from __future__ import annotations

import datetime as dt

import numpy as np

from factfin.market_data.prices import PriceSeries, business_days
from factfin.rng import make_rng

START = dt.date(2020, 1, 1)


def _bars(asset: str, close: np.ndarray, rng: np.random.Generator, spread: float) -> PriceSeries:
    prev = np.concatenate([[close[0]], close[:-1]])
    open_ = prev * np.exp(rng.normal(0.0, spread / 2, len(close)))
    wick = np.abs(rng.normal(0.0, spread, (2, len(close))))
    high = np.maximum(open_, close) * (1 + wick[0])
    low = np.minimum(open_, close) * (1 - wick[1])
    volume = np.round(rng.uniform(1e5, 1e6, len(close)))
    return PriceSeries(asset, business_days(START, len(close)), open_, high, low, close, close, volume,
                       volume * close)


def random_walk(n: int, seed: int, asset: str = "SYN", drift: float = 0.0003, vol: float = 0.015,
                start: float = 100.0, spread: float = 0.004) -> PriceSeries:
    """Geometric random walk with OHLC bars built around each close."""
    rng = make_rng(seed)
    close = start * np.exp(np.cumsum(rng.normal(drift, vol, n)))
    return _bars(asset, close, rng, spread)


def mean_reverting(n: int, seed: int, asset: str = "MRV", phi: float = 0.95, vol: float = 0.02,
                   level: float = 100.0, spread: float = 0.004) -> PriceSeries:
    """Log price follows an AR(1) around ``log(level)``: dips below the level tend to recover.

    That pull is the planted edge: buying oversold readings and selling
    overbought ones earns a positive expected return.
    """
    rng = make_rng(seed)
    x = np.empty(n)
    x[0] = 0.0
    shocks = rng.normal(0.0, vol, n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + shocks[t]
    return _bars(asset, level * np.exp(x), rng, spread)
