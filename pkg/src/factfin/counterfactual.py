"""Counterfactual datasets: seeded perturbations, authored scenarios, and stat checks.

What ``delta`` means per kind (``delta = 0`` always returns the input unchanged):

=========================  ===========================================================
price-noise                close_t *= 1 + delta * eps_t, eps_t ~ N(0, sigma^2)
price-random-walk          log-price blend: (1 - delta) * original + delta * walk
price-historical-average   price blend: (1 - delta) * original + delta * trailing mean
indicator-override         value blend: original + delta * (literal - original)
news-remove/news-replace   any delta > 0 applies the edit
sector-override            any delta > 0 swaps the sector snippets
=========================  ===========================================================

Open/high/low/adj_close are scaled by the same factor as close, which keeps
every bar's shape valid. Bars outside ``[start, end]`` are never touched.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from factfin.errors import PerturbationError, SchemaError, ValidationError
from factfin.market_data.dataset import Dataset
from factfin.market_data.factors import FactorSpec
from factfin.market_data.news import NewsItem
from factfin.market_data.prices import PRICE_FIELDS, PriceSeries, business_days_ending
from factfin.market_data.retrieval import Snippet
from factfin.rng import derive_seed, make_rng

PERTURBATION_KINDS = ("price-noise", "price-random-walk", "price-historical-average",
                      "indicator-override", "news-remove", "news-replace", "sector-override")
PRICE_KINDS = PERTURBATION_KINDS[:3]


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    delta: float = 1.0
    sigma: float = 1.0
    start: int | None = None
    end: int | None = None
    values: Mapping[str, float] = field(default_factory=dict)
    reflect_about: Mapping[str, float] = field(default_factory=dict)
    jitter: float = 0.0
    news_ids: tuple[str, ...] = ()
    replacement: str = ""
    sector: tuple[str, ...] = ()
    window: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValidationError(f"unknown perturbation kind {self.kind!r}")
        if self.delta < 0 or self.sigma < 0 or self.jitter < 0:
            raise ValidationError("delta, sigma and jitter must be >= 0")
        object.__setattr__(self, "values", dict(self.values))
        object.__setattr__(self, "reflect_about", dict(self.reflect_about))
        object.__setattr__(self, "news_ids", tuple(self.news_ids))
        object.__setattr__(self, "sector", tuple(self.sector))

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["news_ids"] = list(self.news_ids)
        out["sector"] = list(self.sector)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "PerturbationSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(obj) - known
        if extra:
            raise SchemaError(f"unknown perturbation field(s): {', '.join(sorted(extra))}", sorted(extra)[0])
        return cls(**obj)


def _segment(spec: PerturbationSpec, n: int) -> tuple[int, int]:
    start = 0 if spec.start is None else spec.start
    end = n - 1 if spec.end is None else spec.end
    if start < 0:
        start += n
    if end < 0:
        end += n
    start, end = max(start, 0), min(end, n - 1)
    if start > end:
        raise PerturbationError(f"empty target: bars [{spec.start}, {spec.end}] select nothing")
    return start, end


def _rescale(series: PriceSeries, start: int, new_close: np.ndarray) -> PriceSeries:
    old = np.asarray(series.close)
    seg = slice(start, start + len(new_close))
    ratio = np.asarray(new_close) / old[seg]
    if not np.all(np.isfinite(ratio)) or np.any(ratio <= 0):
        raise PerturbationError("perturbed prices are not positive; bar cannot be repaired")
    cols = {}
    for name in PRICE_FIELDS:
        col = np.array(getattr(series, name))
        col[seg] = col[seg] * ratio
        cols[name] = col
    # repair: pin close exactly and re-widen high/low against float rounding
    cols["close"][seg] = new_close
    cols["high"][seg] = np.maximum.reduce([cols["high"][seg], cols["open"][seg], cols["close"][seg]])
    cols["low"][seg] = np.minimum.reduce([cols["low"][seg], cols["open"][seg], cols["close"][seg]])
    try:
        return series.replace(**cols)
    except ValidationError as exc:
        raise PerturbationError(f"perturbed bars invalid after repair: {exc}") from None


def _price_noise(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    s, e = _segment(spec, len(ds))
    close = np.asarray(ds.series.close)[s:e + 1]
    eps = make_rng(spec.seed).normal(0.0, spec.sigma, size=len(close))
    return ds.replace(series=_rescale(ds.series, s, close * (1.0 + spec.delta * eps)))


def _random_walk(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    s, e = _segment(spec, len(ds))
    close = np.asarray(ds.series.close)[s:e + 1]
    if len(close) < 3:
        raise PerturbationError("random-walk replacement needs a segment of at least 3 bars")
    logc = np.log(close)
    vol = float(np.std(np.diff(logc), ddof=1))
    steps = make_rng(spec.seed).normal(0.0, vol, size=len(close) - 1)
    walk = logc[0] + np.concatenate([[0.0], np.cumsum(steps)])
    blended = np.exp((1.0 - spec.delta) * logc + spec.delta * walk)
    blended[0] = close[0]
    return ds.replace(series=_rescale(ds.series, s, blended))


def _historical_average(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    s, e = _segment(spec, len(ds))
    full = np.asarray(ds.series.close)
    w = max(1, spec.window)
    avg = np.array([math.fsum(full[max(0, t - w + 1):t + 1]) / (t + 1 - max(0, t - w + 1))
                    for t in range(s, e + 1)])
    close = full[s:e + 1]
    return ds.replace(series=_rescale(ds.series, s, (1.0 - spec.delta) * close + spec.delta * avg))


def _indicator_override(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    keys = {FactorSpec.parse(k).key: v for k, v in spec.values.items()}
    reflect = {FactorSpec.parse(k).key: v for k, v in spec.reflect_about.items()}
    if not keys and not reflect:
        raise PerturbationError("empty target: indicator-override names no factors")
    s, e = _segment(spec, len(ds))
    rng = make_rng(spec.seed)
    supplied = dict(ds.supplied)
    current = ds.factor_set(list(keys) + list(reflect))
    for key in sorted(set(keys) | set(reflect)):
        orig = np.asarray(current.values[key])
        col = np.array(supplied.get(key, np.full(len(ds), np.nan)))
        for t in range(s, e + 1):
            literal = keys[key] if key in keys else 2.0 * reflect[key] - orig[t]
            if spec.jitter > 0:
                literal += spec.jitter * float(rng.standard_normal())
            if math.isnan(literal):
                continue
            base = orig[t]
            value = literal if math.isnan(base) else base + spec.delta * (literal - base)
            if key.startswith("rsi(") or key.startswith("kdj_k(") or key.startswith("kdj_d("):
                value = min(100.0, max(0.0, value))
            col[t] = value
        supplied[key] = col
    return ds.replace(supplied=supplied)


def _targeted_news(ds: Dataset, spec: PerturbationSpec) -> set[str]:
    if spec.news_ids:
        ids = set(spec.news_ids) & {n.id for n in ds.news}
    else:
        s, e = _segment(spec, len(ds))
        lo, hi = ds.series.dates[s], ds.series.dates[e]
        ids = {n.id for n in ds.news if lo <= n.timestamp <= hi}
    if not ids:
        raise PerturbationError("empty target: no news items selected")
    return ids


def _news_remove(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    ids = _targeted_news(ds, spec)
    return ds.replace(news=[n for n in ds.news if n.id not in ids])


def _news_replace(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    ids = _targeted_news(ds, spec)
    if not spec.replacement:
        raise PerturbationError("news-replace needs replacement text")
    news = [dataclasses.replace(n, headline=spec.replacement, body="", id=f"{n.id}-cf") if n.id in ids else n
            for n in ds.news]
    return ds.replace(news=news)


def _sector_override(ds: Dataset, spec: PerturbationSpec) -> Dataset:
    if not any(s.kind == "sector" for s in ds.corpus):
        raise PerturbationError("empty target: corpus has no sector snippets")
    kept = [s for s in ds.corpus if s.kind != "sector"]
    new = [Snippet(f"sector-cf-{i}", text, "sector") for i, text in enumerate(spec.sector)]
    return ds.replace(corpus=kept + new)


_KINDS = {
    "price-noise": _price_noise,
    "price-random-walk": _random_walk,
    "price-historical-average": _historical_average,
    "indicator-override": _indicator_override,
    "news-remove": _news_remove,
    "news-replace": _news_replace,
    "sector-override": _sector_override,
}


def perturb(dataset: Dataset, spec: PerturbationSpec) -> Dataset:
    """Return the counterfactual dataset for ``spec``; the input is not modified."""
    if spec.delta == 0.0:
        return dataset
    return _KINDS[spec.kind](dataset, spec)


# -- scenario sets -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    dataset: Dataset
    spec: PerturbationSpec | None = None
    original: Dataset | None = None
    elements: Mapping | None = None  # authored element pairs, kept verbatim for round-trips
    meta: Mapping = field(default_factory=dict)


@dataclass(eq=False)
class ScenarioSet:
    original: Dataset | None
    scenarios: tuple[Scenario, ...]
    provenance: str = "generated"
    seed: int | None = None

    def __post_init__(self):
        self.scenarios = tuple(self.scenarios)
        dupes = [k for k, c in Counter(s.id for s in self.scenarios).items() if c > 1]
        if dupes:
            raise ValidationError(f"duplicate scenario ids: {', '.join(dupes)}")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self) -> Iterator[Scenario]:
        return iter(self.scenarios)

    def original_for(self, scenario: Scenario) -> Dataset:
        base = scenario.original if scenario.original is not None else self.original
        if base is None:
            raise ValidationError(f"scenario {scenario.id} has no original dataset")
        return base

    def pairs(self) -> Iterator[tuple[Scenario, Dataset, Dataset]]:
        for sc in self.scenarios:
            yield sc, self.original_for(sc), sc.dataset


def make_scenario_set(dataset: Dataset, specs: Sequence[PerturbationSpec], n_per_spec: int,
                      seed: int) -> ScenarioSet:
    """``n_per_spec`` scenarios per spec; scenario ``i`` of spec ``j`` uses seed derive_seed(seed, j, i)."""
    if n_per_spec < 1:
        raise ValidationError("n_per_spec must be >= 1")
    counters: Counter = Counter()
    scenarios = []
    for j, spec in enumerate(specs):
        for i in range(n_per_spec):
            sub = dataclasses.replace(spec, seed=derive_seed(seed, j, i))
            sid = f"{spec.kind}-{counters[spec.kind]}"
            counters[spec.kind] += 1
            scenarios.append(Scenario(sid, perturb(dataset, sub), sub))
    return ScenarioSet(dataset, tuple(scenarios), "generated", seed)


MANIFEST_SCHEMA = "factfin.scenario-manifest/1"


def manifest(scenario_set: ScenarioSet) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "provenance": scenario_set.provenance,
        "seed": scenario_set.seed,
        "asset": scenario_set.original.asset if scenario_set.original is not None else None,
        "scenarios": [{"id": s.id, "spec": s.spec.to_json()} for s in scenario_set],
    }


def save_manifest(scenario_set: ScenarioSet, path: str | Path) -> None:
    if any(s.spec is None for s in scenario_set):
        raise ValidationError("only generated scenario sets have a manifest")
    Path(path).write_text(json.dumps(manifest(scenario_set), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, base: Dataset) -> ScenarioSet:
    """Rebuild a generated scenario set from its manifest; specs carry their derived seeds."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("schema") != MANIFEST_SCHEMA:
        raise SchemaError(f"not a scenario manifest (schema={obj.get('schema')!r})", "schema")
    scenarios = []
    for entry in obj["scenarios"]:
        spec = PerturbationSpec.from_json(entry["spec"])
        scenarios.append(Scenario(entry["id"], perturb(base, spec), spec))
    return ScenarioSet(base, tuple(scenarios), obj.get("provenance", "generated"), obj.get("seed"))


# -- authored scenarios ----------------------------------------------------------

AUTHORED_SCHEMA = "factfin.authored-scenarios/1"
ELEMENTS = ("market_news", "price_data", "technical_indicators", "sector_performance")
SCENARIO_FIELDS = {"id", "asset", "date", "title", "elements"}
REQUIRED_SCENARIO_FIELDS = {"id", "asset", "date", "elements"}
ELEMENT_FIELDS = {"original", "counterfactual", "note"}
INDICATOR_ALIASES = {"rsi": "rsi(14)", "macd": "macd(12,26,9)", "macd_signal": "macd_signal(12,26,9)",
                     "macd_hist": "macd_hist(12,26,9)", "sma_50": "sma(50)", "sma_200": "sma(200)",
                     "sma_20": "sma(20)", "kdj_k": "kdj_k(9,3,3)", "kdj_d": "kdj_d(9,3,3)"}
VARIANTS = ("original", "counterfactual")


def _check_number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise SchemaError(f"{where} must be a finite number", where)
    return x


def _validate_authored(obj) -> None:
    if not isinstance(obj, dict):
        raise SchemaError("top level must be an object", "$")
    extra = set(obj) - {"schema", "scenarios"}
    if extra:
        raise SchemaError(f"unknown field {sorted(extra)[0]!r}", sorted(extra)[0])
    if obj.get("schema") != AUTHORED_SCHEMA:
        raise SchemaError(f"schema must be {AUTHORED_SCHEMA!r}", "schema")
    if not isinstance(obj.get("scenarios"), list):
        raise SchemaError("scenarios must be a list", "scenarios")
    for k, sc in enumerate(obj["scenarios"]):
        where = f"scenarios[{k}]"
        if not isinstance(sc, dict):
            raise SchemaError(f"{where} must be an object", where)
        extra = set(sc) - SCENARIO_FIELDS
        if extra:
            name = sorted(extra)[0]
            raise SchemaError(f"unknown field {name!r} in {where}", name)
        missing = REQUIRED_SCENARIO_FIELDS - set(sc)
        if missing:
            name = sorted(missing)[0]
            raise SchemaError(f"missing field {name!r} in {where}", name)
        try:
            dt.date.fromisoformat(sc["date"])
        except (TypeError, ValueError):
            raise SchemaError(f"{where}.date must be an ISO date", "date") from None
        elements = sc["elements"]
        if not isinstance(elements, dict) or not elements:
            raise SchemaError(f"{where}.elements must be a non-empty object", "elements")
        for name, el in elements.items():
            if name not in ELEMENTS:
                raise SchemaError(f"unknown element {name!r} in {where}", name)
            if not isinstance(el, dict):
                raise SchemaError(f"{where}.{name} must be an object", name)
            extra = set(el) - ELEMENT_FIELDS
            if extra:
                bad = sorted(extra)[0]
                raise SchemaError(f"unknown field {bad!r} in {where}.{name}", bad)
            for variant in VARIANTS:
                if variant not in el:
                    raise SchemaError(f"{where}.{name} lacks {variant!r}", variant)
                _check_element(name, el[variant], f"{where}.{name}.{variant}")


def _check_element(name: str, value, where: str) -> None:
    if name == "market_news":
        if not isinstance(value, str):
            raise SchemaError(f"{where} must be text", name)
    elif name == "price_data":
        if not isinstance(value, list) or not value:
            raise SchemaError(f"{where} must be a non-empty list of prices", name)
        for i, x in enumerate(value):
            if _check_number(x, f"{where}[{i}]") <= 0:
                raise SchemaError(f"{where}[{i}] must be positive", name)
    else:
        if not isinstance(value, dict):
            raise SchemaError(f"{where} must be an object", name)
        for k, x in value.items():
            _check_number(x, f"{where}.{k}")
            if name == "technical_indicators":
                try:
                    FactorSpec.parse(INDICATOR_ALIASES.get(k, k))
                except Exception:
                    raise SchemaError(f"unknown indicator {k!r} in {where}", k) from None


def sector_text(sector: str, pct: float) -> str:
    return f"{sector}: {pct:+.1f}%"


def _materialize(sc: Mapping, variant: str, base: Dataset | None) -> Dataset:
    date = dt.date.fromisoformat(sc["date"])
    asset = sc["asset"]
    elements = sc["elements"]
    prices = elements.get("price_data", {}).get(variant)
    if base is None:
        closes = prices if prices is not None else [1.0]  # placeholder bar when no prices are authored
        ds = Dataset(PriceSeries.from_closes(asset, closes, dates=business_days_ending(date, len(closes))))
        idx = len(ds) - 1
    else:
        ds = base
        try:
            idx = ds.series.index_of(date)
        except KeyError:
            raise SchemaError(f"scenario date {date} not in base dataset", "date") from None
        if prices is not None:
            k = len(prices)
            if k > idx + 1:
                raise SchemaError("price_data longer than base history", "price_data")
            ds = ds.replace(series=_rescale(ds.series, idx - k + 1, np.array(prices, dtype=float)))
    if "technical_indicators" in elements:
        supplied = dict(ds.supplied)
        for name, value in elements["technical_indicators"][variant].items():
            key = FactorSpec.parse(INDICATOR_ALIASES.get(name, name)).key
            col = np.array(supplied.get(key, np.full(len(ds), np.nan)))
            col[idx] = value
            supplied[key] = col
        ds = ds.replace(supplied=supplied)
    if "market_news" in elements:
        day = ds.series.dates[idx]
        kept = [n for n in ds.news if n.timestamp != day]
        item = NewsItem(day, asset, elements["market_news"][variant], source="scenario",
                        id=f"{sc['id']}-news-{variant}")
        ds = ds.replace(news=kept + [item])
    if "sector_performance" in elements:
        kept = [s for s in ds.corpus if s.kind != "sector"]
        sectors = [Snippet(f"{sc['id']}-sector-{i}", sector_text(k, v), "sector")
                   for i, (k, v) in enumerate(elements["sector_performance"][variant].items())]
        ds = ds.replace(corpus=kept + sectors)
    return ds


def load_scenarios(path: str | Path, base: Dataset | Mapping[str, Dataset] | None = None) -> ScenarioSet:
    """Load hand-authored original/counterfactual element pairs.

    Each scenario materializes two datasets: the base with the ``original``
    elements applied, and the base with the ``counterfactual`` elements. With
    no base, a minimal dataset is built from the authored prices (or a single
    placeholder bar when the scenario authors no prices).
    """
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    _validate_authored(obj)
    scenarios = []
    for sc in obj["scenarios"]:
        b = base.get(sc["asset"]) if isinstance(base, Mapping) else base
        scenarios.append(Scenario(sc["id"], _materialize(sc, "counterfactual", b), None,
                                  _materialize(sc, "original", b), sc["elements"],
                                  {k: sc[k] for k in ("asset", "date", "title") if k in sc}))
    return ScenarioSet(None, tuple(scenarios), "authored")


def save_scenarios(scenario_set: ScenarioSet, path: str | Path) -> None:
    out = {"schema": AUTHORED_SCHEMA, "scenarios": []}
    for s in scenario_set:
        if s.elements is None:
            raise ValidationError(f"scenario {s.id} is not authored")
        entry = {"id": s.id, **dict(s.meta), "elements": s.elements}
        out["scenarios"].append(entry)
    Path(path).write_text(json.dumps(out, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# -- statistics ---------------------------------------------------------------------

DEFAULT_TOLERANCES = {"mean": 0.05, "volatility": 0.10, "first": 1e-12}
STATISTICS = ("mean", "volatility", "first")
# statistics each price kind promises to keep; other kinds leave closes untouched
PRESERVED = {"price-noise": ("mean",), "price-random-walk": ("volatility", "first"),
             "price-historical-average": ("mean",)}


@dataclass(frozen=True)
class StatLine:
    statistic: str
    original: float
    counterfactual: float
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


@dataclass(frozen=True)
class StatReport:
    lines: tuple[StatLine, ...]

    @property
    def passed(self) -> bool:
        return all(line.passed for line in self.lines)

    def __getitem__(self, name: str) -> StatLine:
        return next(line for line in self.lines if line.statistic == name)

    def to_json(self) -> dict:
        return {"passed": self.passed, "statistics": [
            {**dataclasses.asdict(line), "passed": line.passed} for line in self.lines]}


def _stats(close: np.ndarray) -> dict[str, float]:
    logret = np.diff(np.log(close))
    vol = float(np.std(logret, ddof=1)) if len(logret) > 1 else 0.0
    return {"mean": math.fsum(close) / len(close), "volatility": vol, "first": float(close[0])}


def _rel(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(b - a) / abs(a) if a != 0 else abs(b - a)


def verify_statistics(original: Dataset, perturbed: Dataset, tolerances: Mapping[str, float] | None = None,
                      start: int | None = None, end: int | None = None,
                      statistics: Sequence[str] = STATISTICS) -> StatReport:
    """Relative deviation of segment mean, per-step log-return volatility, and anchor price."""
    if len(original) != len(perturbed):
        raise ValidationError("datasets are not aligned")
    tol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    s = 0 if start is None else start
    e = len(original) - 1 if end is None else end
    a = _stats(np.asarray(original.series.close)[s:e + 1])
    b = _stats(np.asarray(perturbed.series.close)[s:e + 1])
    return StatReport(tuple(StatLine(k, a[k], b[k], _rel(a[k], b[k]), tol[k]) for k in statistics))


def stat_reports(scenario_set: ScenarioSet, tolerances: Mapping[str, float] | None = None) -> dict[str, StatReport]:
    out = {}
    for sc, orig, cf in scenario_set.pairs():
        if len(orig) == len(cf):
            spec = sc.spec
            if spec is None:
                out[sc.id] = verify_statistics(orig, cf, tolerances)
                continue
            s, e = _segment(spec, len(orig))
            out[sc.id] = verify_statistics(orig, cf, tolerances, s, e, PRESERVED.get(spec.kind, STATISTICS))
    return out


def bundled_scenarios_path() -> Path:
    from importlib import resources
    return Path(str(resources.files("factfin") / "data" / "scenarios_v1.json"))
