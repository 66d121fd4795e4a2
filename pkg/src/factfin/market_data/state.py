"""Market state at a bar: trailing prices, factor slice, and factorized news."""

from __future__ import annotations

import datetime as dt
import math
from collections.abc import Mapping
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

from factfin.market_data.factors import FACTOR_CATALOG, FactorSet
from factfin.market_data.news import NewsFactors
from factfin.market_data.prices import PriceSeries

DEFAULT_WINDOW = 30


class FactorRow(Mapping):
    """Read-only view of one bar of a FactorSet."""

    __slots__ = ("_fs", "_t")

    def __init__(self, factors: FactorSet, t: int):
        self._fs = factors
        self._t = t

    def __getitem__(self, key: str) -> float:
        return float(self._fs.values[key][self._t])

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._fs.values))

    def __len__(self) -> int:
        return len(self._fs.values)


def calendar_features(day: dt.date) -> dict[str, float]:
    return {"year": float(day.year), "month": float(day.month), "day": float(day.day),
            "weekday": float(day.weekday()), "day_of_year": float(day.timetuple().tm_yday)}


@dataclass(frozen=True, eq=False)
class MarketState:
    series: PriceSeries
    t: int
    window_size: int
    factors: Mapping[str, float]
    news: NewsFactors

    @property
    def asset(self) -> str:
        return self.series.asset

    @property
    def timestamp(self) -> dt.date:
        return self.series.dates[self.t]

    @property
    def close(self) -> float:
        return float(self.series.close[self.t])

    @cached_property
    def window(self) -> PriceSeries:
        start = max(0, self.t - self.window_size + 1)
        return self.series.slice(start, self.t + 1)

    def value(self, key: str) -> float:
        """Resolve a feature key; NaN when the value is not ready."""
        if key in self.factors:
            return self.factors[key]
        name = key.split("(", 1)[0]
        d = FACTOR_CATALOG.get(name)
        if d is None:
            raise KeyError(key)
        if d.source == "news":
            return self.news.features()[key]
        if d.source == "calendar":
            return calendar_features(self.timestamp)[key]
        return math.nan

    def factor_items(self) -> list[tuple[str, float]]:
        return [(k, self.factors[k]) for k in sorted(self.factors)]


def build_state(series: PriceSeries, factors: FactorSet, news: NewsFactors, t: int,
                window: int = DEFAULT_WINDOW) -> MarketState:
    if not 0 <= t < len(series):
        raise IndexError(f"t={t} outside series of length {len(series)}")
    if window < 1:
        raise ValueError("window must be >= 1")
    return MarketState(series, t, window, FactorRow(factors, t), news)
