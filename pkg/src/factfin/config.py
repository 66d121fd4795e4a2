"""Run configuration loaded from a YAML file.

Relative paths are resolved against the config file's directory. Only the
model-endpoint credential comes from the environment (``FACTFIN_LLM_KEY``).
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from factfin.backtest import CostModel
from factfin.counterfactual import PerturbationSpec
from factfin.errors import ConfigurationError, FactFinError
from factfin.search import SearchConfig

BACKENDS = ("template", "gateway", "replay")
TOP_KEYS = {"asset", "data", "windows", "cost", "perturbations", "scenarios_per_spec", "search", "leakage",
            "generator", "strategy", "seed", "out"}
DEFAULT_PERTURBATIONS = (
    {"kind": "price-noise", "delta": 0.01, "sigma": 1.0},
    {"kind": "indicator-override", "reflect_about": {"rsi(14)": 50.0}},
)


@dataclass(frozen=True)
class GeneratorSettings:
    backend: str = "template"
    url: str = ""
    model: str = ""
    timeout: float = 30.0
    max_attempts: int = 3
    backoff: float = 0.5
    transcript: str | None = None
    temperature: float = 0.7


@dataclass(frozen=True)
class RunConfig:
    asset: str | None = None
    prices: str | None = None
    news: str | None = None
    supplied: str | None = None
    corpus: str | None = None
    train: tuple[dt.date | None, dt.date | None] = (None, None)
    eval: tuple[dt.date | None, dt.date | None] = (None, None)
    cost: CostModel = CostModel()
    perturbations: tuple[PerturbationSpec, ...] = ()
    scenarios_per_spec: int = 50
    search: SearchConfig = SearchConfig()
    generator: GeneratorSettings = GeneratorSettings()
    strategy: str | None = None
    allow_calendar: bool = False
    seed: int = 0
    out: str = "out"
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def hash(self) -> str:
        """Hash of the resolved settings (paths as resolved against the config directory)."""
        body = json.dumps(self.to_json(), sort_keys=True, default=str)
        return hashlib.sha256(body.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "asset": self.asset, "data": {"prices": self.prices, "news": self.news, "supplied": self.supplied,
                                          "corpus": self.corpus},
            "windows": {"train": [str(d) if d else None for d in self.train],
                        "eval": [str(d) if d else None for d in self.eval]},
            "cost": asdict(self.cost), "perturbations": [p.to_json() for p in self.perturbations],
            "scenarios_per_spec": self.scenarios_per_spec, "search": asdict(self.search),
            "generator": asdict(self.generator), "strategy": self.strategy, "allow_calendar": self.allow_calendar,
            "seed": self.seed,
        }


def _window(value, name: str) -> tuple[dt.date | None, dt.date | None]:
    if value is None:
        return (None, None)
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError(f"windows.{name} must be [start, end]")
    out = []
    for v in value:
        if v is None or isinstance(v, dt.date):
            out.append(v)
        else:
            try:
                out.append(dt.date.fromisoformat(str(v)))
            except ValueError:
                raise ConfigurationError(f"windows.{name}: {v!r} is not an ISO date") from None
    if out[0] and out[1] and out[0] > out[1]:
        raise ConfigurationError(f"windows.{name} start is after its end")
    return out[0], out[1]


def _section(cls, data, name: str, **extra):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    bad = set(data) - known
    if bad:
        raise ConfigurationError(f"unknown key {name}.{sorted(bad)[0]}")
    try:
        return cls(**{**data, **extra})
    except (TypeError, ValueError, FactFinError) as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def parse_config(data: Mapping[str, Any] | None, base: Path = Path("."), seed: int | None = None,
                 out: str | None = None, backend: str | None = None) -> RunConfig:
    data = dict(data or {})
    bad = set(data) - TOP_KEYS
    if bad:
        raise ConfigurationError(f"unknown config key {sorted(bad)[0]!r}")

    def path(v):
        return None if v is None else str((base / v) if not Path(v).is_absolute() else Path(v))

    files = dict(data.get("data") or {})
    bad = set(files) - {"prices", "news", "supplied", "corpus"}
    if bad:
        raise ConfigurationError(f"unknown key data.{sorted(bad)[0]}")
    windows = dict(data.get("windows") or {})
    master = int(seed if seed is not None else data.get("seed", 0))
    search = dict(data.get("search") or {})
    search.update(data.get("leakage") or {})
    search.setdefault("seed", master)
    if seed is not None:
        search["seed"] = master
    gen = dict(data.get("generator") or {})
    if backend is not None:
        gen["backend"] = backend
    if gen.get("transcript"):
        gen["transcript"] = path(gen["transcript"])
    gsettings = _section(GeneratorSettings, gen, "generator")
    if gsettings.backend not in BACKENDS:
        raise ConfigurationError(f"generator.backend must be one of {', '.join(BACKENDS)}")
    raw_specs = data.get("perturbations", list(DEFAULT_PERTURBATIONS))
    try:
        specs = tuple(PerturbationSpec.from_json(s) for s in raw_specs)
    except (TypeError, FactFinError) as exc:
        raise ConfigurationError(f"perturbations: {exc}") from None
    strat = data.get("strategy")
    allow_calendar = False
    if isinstance(strat, Mapping):
        allow_calendar = bool(strat.get("allow_calendar", False))
        strat = strat.get("path")
    return RunConfig(
        asset=data.get("asset"), prices=path(files.get("prices")), news=path(files.get("news")),
        supplied=path(files.get("supplied")), corpus=path(files.get("corpus")),
        train=_window(windows.get("train"), "train"), eval=_window(windows.get("eval"), "eval"),
        cost=_section(CostModel, data.get("cost"), "cost"), perturbations=specs,
        scenarios_per_spec=int(data.get("scenarios_per_spec", 50)),
        search=_section(SearchConfig, search, "search"), generator=gsettings,
        strategy=path(strat), allow_calendar=allow_calendar, seed=master,
        out=out or path(data.get("out", "out")), raw=data)


def load_config(path: str | Path | None, seed: int | None = None, out: str | None = None,
                backend: str | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, Path("."), seed, out, backend)
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError("config top level must be a mapping")
    return parse_config(data, p.parent, seed, out, backend)
