"""OHLCV bars and series, plus the CSV reader/writer."""

from __future__ import annotations

import csv
from collections import Counter
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from factfin.errors import ParseError, ValidationError

CSV_COLUMNS = ("date", "open", "high", "low", "close", "adj_close", "volume", "turnover")
PRICE_FIELDS = ("open", "high", "low", "close", "adj_close")
NUMERIC_FIELDS = PRICE_FIELDS + ("volume", "turnover")


@dataclass(frozen=True)
class PriceBar:
    timestamp: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float = 0.0
    turnover: float = 0.0

    def violations(self) -> list[str]:
        problems = []
        for name in PRICE_FIELDS:
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.low > min(self.open, self.close):
            problems.append("low above open/close")
        if self.high < max(self.open, self.close):
            problems.append("high below open/close")
        if self.low > self.high:
            problems.append("high < low")
        if self.volume < 0 or self.turnover < 0:
            problems.append("negative volume/turnover")
        return problems


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


class PriceSeries:
    """Columnar, immutable price history for one asset.

    Arrays are read-only; perturbations build new series via ``replace``.
    """

    def __init__(self, asset: str, dates: Sequence[dt.date], open, high, low, close,
                 adj_close=None, volume=None, turnover=None, validate: bool = True):
        self.asset = asset
        self.dates = tuple(dates)
        n = len(self.dates)
        self.open = _frozen(open)
        self.high = _frozen(high)
        self.low = _frozen(low)
        self.close = _frozen(close)
        self.adj_close = _frozen(close if adj_close is None else adj_close)
        self.volume = _frozen(np.zeros(n) if volume is None else volume)
        self.turnover = _frozen(np.zeros(n) if turnover is None else turnover)
        for name in NUMERIC_FIELDS:
            if len(getattr(self, name)) != n:
                raise ValidationError(f"column {name} has {len(getattr(self, name))} values, expected {n}")
        if validate:
            self.validate()

    @classmethod
    def from_bars(cls, asset: str, bars: Iterable[PriceBar], validate: bool = True) -> "PriceSeries":
        bars = list(bars)
        cols = {name: [getattr(b, name) for b in bars] for name in NUMERIC_FIELDS}
        return cls(asset, [b.timestamp for b in bars], validate=validate, **cols)

    @classmethod
    def from_closes(cls, asset: str, closes: Sequence[float], start: dt.date = dt.date(2020, 1, 1),
                    dates: Sequence[dt.date] | None = None) -> "PriceSeries":
        """Flat bars (open = high = low = close); handy for fixtures and synthetic data."""
        closes = np.asarray(closes, dtype=float)
        if dates is None:
            dates = business_days(start, len(closes))
        return cls(asset, dates, closes, closes, closes, closes)

    def __len__(self) -> int:
        return len(self.dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (self.asset == other.asset and self.dates == other.dates
                and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in NUMERIC_FIELDS))

    def bar(self, i: int) -> PriceBar:
        return PriceBar(self.dates[i], *(float(getattr(self, f)[i]) for f in NUMERIC_FIELDS))

    @property
    def bars(self) -> list[PriceBar]:
        return [self.bar(i) for i in range(len(self))]

    def index_of(self, date: dt.date) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise KeyError(f"{date} not in series {self.asset}") from None

    def truncate(self, end: int) -> "PriceSeries":
        """Bars ``0..end`` inclusive."""
        return self.slice(0, end + 1)

    def slice(self, start: int, stop: int) -> "PriceSeries":
        cols = {f: getattr(self, f)[start:stop] for f in NUMERIC_FIELDS}
        return PriceSeries(self.asset, self.dates[start:stop], validate=False, **cols)

    def replace(self, **columns) -> "PriceSeries":
        cols = {f: columns.get(f, getattr(self, f)) for f in NUMERIC_FIELDS}
        return PriceSeries(columns.get("asset", self.asset), columns.get("dates", self.dates), **cols)

    def validate(self) -> None:
        bad: dict[str, list[str]] = {}
        for i in range(len(self)):
            problems = self.bar(i).violations()
            if problems:
                bad[self.dates[i].isoformat()] = problems
        if bad:
            detail = "; ".join(f"{d}: {', '.join(p)}" for d, p in bad.items())
            raise ValidationError(f"invalid bars on {', '.join(bad)} ({detail})")
        for i in range(1, len(self)):
            if self.dates[i] == self.dates[i - 1]:
                raise ValidationError(f"duplicate timestamp {self.dates[i].isoformat()}")
            if self.dates[i] < self.dates[i - 1]:
                raise ValidationError(f"timestamps not increasing at {self.dates[i].isoformat()}")


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def business_days_ending(end: dt.date, n: int) -> list[dt.date]:
    out, d = [], end
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d -= dt.timedelta(days=1)
    return out[::-1]


def load_ohlcv(path: str | Path, asset: str | None = None) -> PriceSeries:
    """Read an OHLCV CSV, validate every bar, and return it sorted by date.

    Rows may arrive in any order; duplicates and bar-shape violations raise
    ``ValidationError`` naming the offending dates. Unparseable rows raise
    ``ParseError`` carrying the 1-based file line number.
    """
    path = Path(path)
    asset = asset or path.stem
    rows: list[PriceBar] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise ParseError(f"header must be {','.join(CSV_COLUMNS)}, got {header}", line=1, column=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line=line, column=1)
            try:
                date = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"bad date {row[0]!r}", line=line, column=1) from None
            values = []
            for col, raw in enumerate(row[1:], start=2):
                try:
                    values.append(float(raw))
                except ValueError:
                    raise ParseError(f"bad number {raw!r} in column {CSV_COLUMNS[col - 1]}",
                                     line=line, column=col) from None
            rows.append(PriceBar(date, *values))
    counts = Counter(r.timestamp for r in rows)
    dupes = sorted(d for d, k in counts.items() if k > 1)
    if dupes:
        raise ValidationError("duplicate timestamp: " + ", ".join(d.isoformat() for d in dupes))
    rows.sort(key=lambda b: b.timestamp)
    return PriceSeries.from_bars(asset, rows)


def write_ohlcv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for b in series.bars:
            w.writerow([b.timestamp.isoformat()] + [repr(getattr(b, f)) for f in NUMERIC_FIELDS])
