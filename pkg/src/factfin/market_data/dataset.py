"""An aligned dataset: prices, supplied factor columns, news and a retrieval corpus."""

from __future__ import annotations

import bisect
import csv
import json
import datetime as dt
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from factfin.errors import ParseError
from factfin.market_data.factors import (
    COMPUTED, DEFAULT_FACTORS, SUPPLIED, FactorSet, FactorSpec, compute_factors,
)
from factfin.market_data.news import EMPTY_NEWS, NewsFactors, NewsItem, factorize_news
from factfin.market_data.prices import PriceSeries
from factfin.market_data.retrieval import Snippet
from factfin.market_data.state import DEFAULT_WINDOW, MarketState, build_state


class Dataset:
    """Immutable bundle D.

    ``supplied`` holds columns that are ingested rather than computed
    (fundamentals, indicator overrides); a finite supplied value replaces the
    computed one at that bar and marks the factor ``supplied``. News for bar
    ``t`` is every item dated after bar ``t-1`` and on or before bar ``t``.
    Computed columns and per-bar news factors are cached on first use.
    """

    def __init__(self, series: PriceSeries, news: Iterable[NewsItem] = (),
                 supplied: Mapping[str, Sequence[float]] | None = None,
                 corpus: Iterable[Snippet] = ()):
        self.series = series
        self.news = tuple(sorted(news, key=lambda n: (n.timestamp, n.id)))
        self.supplied: dict[str, np.ndarray] = {}
        for key, col in (supplied or {}).items():
            arr = np.array(col, dtype=float)
            if arr.shape != (len(series),):
                raise ValueError(f"supplied column {key} has shape {arr.shape}, expected ({len(series)},)")
            arr.setflags(write=False)
            self.supplied[FactorSpec.parse(key).key] = arr
        self.corpus = tuple(corpus)
        self._computed: dict[str, np.ndarray] = {}
        self._news_cache: dict[int, NewsFactors] = {}
        self._news_by_bar: list[tuple[NewsItem, ...]] | None = None

    def __len__(self) -> int:
        return len(self.series)

    @property
    def asset(self) -> str:
        return self.series.asset

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.series == other.series and self.news == other.news and self.corpus == other.corpus
                and self.supplied.keys() == other.supplied.keys()
                and all(np.array_equal(v, other.supplied[k], equal_nan=True) for k, v in self.supplied.items()))

    def replace(self, **kw) -> "Dataset":
        return Dataset(kw.get("series", self.series), kw.get("news", self.news),
                       kw.get("supplied", self.supplied), kw.get("corpus", self.corpus))

    def between(self, start: dt.date | None = None, end: dt.date | None = None) -> "Dataset":
        """Bars dated in ``[start, end]``; news is kept from the day after the prior bar."""
        dates = self.series.dates
        lo = 0 if start is None else bisect.bisect_left(dates, start)
        hi = len(dates) if end is None else bisect.bisect_right(dates, end)
        if hi - lo < 1:
            raise ValueError(f"no bars between {start} and {end}")
        after = dates[lo - 1] if lo > 0 else None
        news = [n for n in self.news if (after is None or n.timestamp > after) and n.timestamp <= dates[hi - 1]]
        return Dataset(self.series.slice(lo, hi), news, {k: v[lo:hi] for k, v in self.supplied.items()}, self.corpus)

    # -- factors ---------------------------------------------------------------

    def _column(self, spec: FactorSpec) -> tuple[np.ndarray, str]:
        key = spec.key
        sup = self.supplied.get(key)
        if spec.definition.source == "price":
            if key not in self._computed:
                self._computed[key] = compute_factors(self.series, [spec]).values[key]
            col = self._computed[key]
            if sup is None:
                return col, COMPUTED
            merged = np.where(np.isnan(sup), col, sup)
            merged.setflags(write=False)
            return merged, SUPPLIED
        if sup is None:
            return np.full(len(self), math.nan), SUPPLIED
        return sup, SUPPLIED

    def factor_set(self, keys: Iterable[str | FactorSpec] | None = None) -> FactorSet:
        """Price and fundamental factors for ``keys`` (default catalog plus supplied columns)."""
        if keys is None:
            specs = list(DEFAULT_FACTORS) + [FactorSpec.parse(k) for k in self.supplied]
        else:
            specs = [k if isinstance(k, FactorSpec) else FactorSpec.parse(k) for k in keys]
        fs = FactorSet()
        for spec in specs:
            if spec.definition.source not in ("price", "fundamental"):
                continue
            fs.values[spec.key], fs.provenance[spec.key] = self._column(spec)
        return fs

    # -- news ------------------------------------------------------------------

    def news_items_at(self, t: int) -> tuple[NewsItem, ...]:
        if self._news_by_bar is None:
            buckets: list[list[NewsItem]] = [[] for _ in range(len(self))]
            dates = self.series.dates
            j = 0
            for item in self.news:
                while j < len(dates) and dates[j] < item.timestamp:
                    j += 1
                if j < len(dates):
                    buckets[j].append(item)
            self._news_by_bar = [tuple(b) for b in buckets]
        return self._news_by_bar[t]

    def news_factors(self, t: int) -> NewsFactors:
        if t not in self._news_cache:
            items = self.news_items_at(t)
            self._news_cache[t] = factorize_news(items, self.series.dates[t]) if items else EMPTY_NEWS
        return self._news_cache[t]

    def state(self, t: int, keys: Iterable[str] | None = None, window: int = DEFAULT_WINDOW,
              factors: FactorSet | None = None) -> MarketState:
        fs = factors if factors is not None else self.factor_set(keys)
        return build_state(self.series, fs, self.news_factors(t), t, window)

    def states(self, keys: Iterable[str] | None = None, window: int = DEFAULT_WINDOW):
        fs = self.factor_set(keys)
        for t in range(len(self)):
            yield self.state(t, window=window, factors=fs)


def load_supplied(path: str | Path, dates: Sequence[dt.date]) -> dict[str, np.ndarray]:
    """Read ``date,<factor key>...`` columns aligned to ``dates``; gaps become NaN."""
    index = {d: i for i, d in enumerate(dates)}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1, 1) from None
        if not header or header[0] != "date":
            raise ParseError(f"{path}: first column must be 'date'", 1, 1)
        keys = [FactorSpec.parse(k).key for k in header[1:]]
        cols = {k: np.full(len(dates), math.nan) for k in keys}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                day = dt.date.fromisoformat(row[0])
                values = [float(x) if x.strip() else math.nan for x in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", lineno, 1) from None
            if len(values) != len(keys):
                raise ParseError(f"{path}: expected {len(keys) + 1} fields, got {len(row)}", lineno, 1)
            if day in index:
                for k, v in zip(keys, values):
                    cols[k][index[day]] = v
    return cols


def write_supplied(dataset: Dataset, path: str | Path) -> None:
    keys = sorted(dataset.supplied)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *keys])
        for i, d in enumerate(dataset.series.dates):
            w.writerow([d.isoformat(), *("" if math.isnan(dataset.supplied[k][i]) else repr(float(dataset.supplied[k][i]))
                                         for k in keys)])


def load_corpus(path: str | Path) -> list[Snippet]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(Snippet(str(obj["id"]), str(obj["text"]), str(obj.get("kind", "news"))))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: bad snippet record ({exc})", lineno, 1) from None
    return out


def write_corpus(snippets: Iterable[Snippet], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in snippets:
            fh.write(json.dumps({"id": s.id, "text": s.text, "kind": s.kind}, sort_keys=True) + "\n")
