"""Technical factor catalog and computation.

Every computation walks the series forward once, so the value at bar ``t``
is a function of bars ``0..t`` only and recomputing on a truncated series
reproduces it bit for bit. Warm-up bars hold NaN ("not ready"), never zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from factfin.errors import ConfigurationError
from factfin.market_data.prices import PriceSeries

COMPUTED = "computed"
SUPPLIED = "supplied"


@dataclass(frozen=True)
class FactorDef:
    name: str
    defaults: tuple[int, ...] = ()
    # how a comparison margin involving this factor is normalized (see strategy.evaluate)
    scale: str = "unit"
    source: str = "price"  # price | fundamental | news | calendar
    lookback: Callable[[tuple[int, ...]], int] = lambda p: 1


def _first(p):
    return p[0]


FACTOR_CATALOG: dict[str, FactorDef] = {d.name: d for d in [
    FactorDef("open", scale="price"),
    FactorDef("high", scale="price"),
    FactorDef("low", scale="price"),
    FactorDef("close", scale="price"),
    FactorDef("sma", (20,), "price", lookback=_first),
    FactorDef("ema", (20,), "price", lookback=_first),
    FactorDef("macd", (12, 26, 9), "price", lookback=lambda p: p[1]),
    FactorDef("macd_signal", (12, 26, 9), "price", lookback=lambda p: p[1] + p[2] - 1),
    FactorDef("macd_hist", (12, 26, 9), "price", lookback=lambda p: p[1] + p[2] - 1),
    FactorDef("rsi", (14,), "oscillator", lookback=lambda p: p[0] + 1),
    FactorDef("kdj_k", (9, 3, 3), "oscillator", lookback=_first),
    FactorDef("kdj_d", (9, 3, 3), "oscillator", lookback=_first),
    FactorDef("kdj_j", (9, 3, 3), "oscillator", lookback=_first),
    FactorDef("ret", (1,), "return", lookback=lambda p: p[0] + 1),
    FactorDef("volatility", (20,), "return", lookback=lambda p: p[0] + 1),
    FactorDef("pe", scale="valuation", source="fundamental"),
    FactorDef("pb", scale="valuation", source="fundamental"),
    FactorDef("roe", scale="return", source="fundamental"),
    FactorDef("sentiment", scale="score", source="news"),
    FactorDef("topic_earnings", scale="score", source="news"),
    FactorDef("topic_macro", scale="score", source="news"),
    FactorDef("topic_product", scale="score", source="news"),
    FactorDef("topic_regulation", scale="score", source="news"),
    FactorDef("topic_market", scale="score", source="news"),
    FactorDef("topic_other", scale="score", source="news"),
    FactorDef("event_earnings", scale="unit", source="news"),
    FactorDef("event_regulatory", scale="unit", source="news"),
    FactorDef("event_macro", scale="unit", source="news"),
    FactorDef("year", source="calendar"),
    FactorDef("month", source="calendar"),
    FactorDef("day", source="calendar"),
    FactorDef("weekday", source="calendar"),
    FactorDef("day_of_year", source="calendar"),
]}


@dataclass(frozen=True, order=True)
class FactorSpec:
    name: str
    params: tuple[int, ...] = ()

    @property
    def key(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}({','.join(str(p) for p in self.params)})"

    @property
    def definition(self) -> FactorDef:
        return FACTOR_CATALOG[self.name]

    @property
    def lookback(self) -> int:
        return self.definition.lookback(self.params)

    @classmethod
    def make(cls, name: str, params: Iterable[int] = ()) -> "FactorSpec":
        """Validate against the catalog, filling default parameters when none are given."""
        if name not in FACTOR_CATALOG:
            raise ConfigurationError(f"unknown factor {name!r}")
        d = FACTOR_CATALOG[name]
        params = tuple(int(p) for p in params) or d.defaults
        if len(params) != len(d.defaults):
            raise ConfigurationError(f"factor {name} takes {len(d.defaults)} parameters, got {len(params)}")
        if any(p < 1 for p in params):
            raise ConfigurationError(f"factor {name} parameters must be >= 1")
        return cls(name, params)

    @classmethod
    def parse(cls, key: str) -> "FactorSpec":
        key = key.strip()
        if "(" in key:
            name, rest = key.split("(", 1)
            params = [int(x) for x in rest.rstrip(")").split(",") if x.strip()]
            return cls.make(name.strip(), params)
        return cls.make(key)


DEFAULT_FACTORS = tuple(FactorSpec.make(n, p) for n, p in [
    ("rsi", (14,)), ("macd", ()), ("macd_signal", ()), ("macd_hist", ()),
    ("kdj_k", ()), ("kdj_d", ()), ("kdj_j", ()),
    ("sma", (5,)), ("sma", (20,)), ("sma", (50,)), ("sma", (200,)), ("ema", (20,)),
    ("ret", (1,)), ("ret", (5,)), ("volatility", (20,)),
])


@dataclass
class FactorSet:
    """Factor columns aligned with a price series; NaN marks a value that is not ready."""

    values: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, t: int) -> float:
        return float(self.values[key][t])

    def row(self, t: int) -> dict[str, float]:
        return {k: float(v[t]) for k, v in sorted(self.values.items())}

    def merged(self, other: "FactorSet") -> "FactorSet":
        return FactorSet({**self.values, **other.values}, {**self.provenance, **other.provenance})

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactorSet):
            return NotImplemented
        return (self.provenance == other.provenance and self.values.keys() == other.values.keys()
                and all(np.array_equal(v, other.values[k], equal_nan=True) for k, v in self.values.items()))


# -- individual indicators ---------------------------------------------------

def sma(x: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    for t in range(n - 1, len(x)):
        out[t] = math.fsum(x[t - n + 1:t + 1]) / n
    return out


def ema(x: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """EMA seeded with the simple mean of the first ``n`` values from ``start``."""
    out = np.full(len(x), np.nan)
    first = start + n - 1
    if first >= len(x):
        return out
    alpha = 2.0 / (n + 1)
    prev = math.fsum(x[start:first + 1]) / n
    out[first] = prev
    for t in range(first + 1, len(x)):
        prev = alpha * x[t] + (1 - alpha) * prev
        out[t] = prev
    return out


def rsi(close: np.ndarray, n: int = 14) -> np.ndarray:
    """Wilder RSI. Flat windows (no gains, no losses) read 50 by convention."""
    out = np.full(len(close), np.nan)
    if len(close) <= n:
        return out
    diff = np.diff(close)
    gains = np.where(diff > 0, diff, 0.0)
    losses = np.where(diff < 0, -diff, 0.0)
    avg_gain = math.fsum(gains[:n]) / n
    avg_loss = math.fsum(losses[:n]) / n
    out[n] = _rsi_value(avg_gain, avg_loss)
    for t in range(n + 1, len(close)):
        avg_gain = (avg_gain * (n - 1) + gains[t - 1]) / n
        avg_loss = (avg_loss * (n - 1) + losses[t - 1]) / n
        out[t] = _rsi_value(avg_gain, avg_loss)
    return out


def _rsi_value(gain: float, loss: float) -> float:
    if loss == 0.0:
        return 50.0 if gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + gain / loss)


def macd(close: np.ndarray, fast: int = 12, slow: int = 26, signal: int = 9):
    line = ema(close, fast) - ema(close, slow)
    sig = ema(np.nan_to_num(line), signal, start=slow - 1)
    sig[:slow + signal - 2] = np.nan
    return line, sig, line - sig


def kdj(high: np.ndarray, low: np.ndarray, close: np.ndarray, n: int = 9, m1: int = 3, m2: int = 3):
    k_out = np.full(len(close), np.nan)
    d_out = np.full(len(close), np.nan)
    k = d = 50.0
    for t in range(n - 1, len(close)):
        hh = max(high[t - n + 1:t + 1])
        ll = min(low[t - n + 1:t + 1])
        rsv = 50.0 if hh == ll else (close[t] - ll) / (hh - ll) * 100.0
        k = (m1 - 1) / m1 * k + rsv / m1
        d = (m2 - 1) / m2 * d + k / m2
        k_out[t], d_out[t] = k, d
    return k_out, d_out, 3 * k_out - 2 * d_out


def pct_return(close: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(close), np.nan)
    out[n:] = close[n:] / close[:-n] - 1.0
    return out


def rolling_volatility(close: np.ndarray, n: int) -> np.ndarray:
    out = np.full(len(close), np.nan)
    logret = np.diff(np.log(close))
    for t in range(n, len(close)):
        window = logret[t - n:t]
        mean = math.fsum(window) / n
        out[t] = math.sqrt(math.fsum((w - mean) ** 2 for w in window) / (n - 1)) if n > 1 else 0.0
    return out


def _compute_one(series: PriceSeries, spec: FactorSpec) -> np.ndarray:
    c = np.asarray(series.close)
    p = spec.params
    name = spec.name
    if name in ("open", "high", "low", "close"):
        return np.array(getattr(series, name), dtype=float)
    if name == "sma":
        return sma(c, p[0])
    if name == "ema":
        return ema(c, p[0])
    if name.startswith("macd"):
        line, sig, hist = macd(c, *p)
        return {"macd": line, "macd_signal": sig, "macd_hist": hist}[name]
    if name == "rsi":
        return rsi(c, p[0])
    if name.startswith("kdj"):
        k, d, j = kdj(np.asarray(series.high), np.asarray(series.low), c, *p)
        return {"kdj_k": k, "kdj_d": d, "kdj_j": j}[name]
    if name == "ret":
        return pct_return(c, p[0])
    if name == "volatility":
        return rolling_volatility(c, p[0])
    raise ConfigurationError(f"factor {name!r} is not computed from prices")


def compute_factors(series: PriceSeries, specs: Iterable[FactorSpec | str]) -> FactorSet:
    """Compute the requested price-derived factors over the whole series.

    Unknown names raise ``ConfigurationError``; short series yield NaN columns.
    """
    fs = FactorSet()
    for spec in specs:
        if isinstance(spec, str):
            spec = FactorSpec.parse(spec)
        if spec.definition.source != "price":
            raise ConfigurationError(f"factor {spec.key} is {spec.definition.source}, not computed")
        col = _compute_one(series, spec)
        col.setflags(write=False)
        fs.values[spec.key] = col
        fs.provenance[spec.key] = COMPUTED
    return fs


def supplied_factors(columns: Mapping[str, np.ndarray]) -> FactorSet:
    fs = FactorSet()
    for key, col in columns.items():
        arr = np.array(col, dtype=float)
        arr.setflags(write=False)
        fs.values[key] = arr
        fs.provenance[key] = SUPPLIED
    return fs
