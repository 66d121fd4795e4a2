"""Prompt templates and the volatility-regime registry.

Placeholders are ``{Prices}``, ``{Factors}``, ``{News}``, ``{Examples}`` and
``{CurrentStrategy}``. Any other ``{Word}`` is an error. The bundled template
texts are original to this package.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from factfin.errors import TemplateError
from factfin.market_data.dataset import Dataset
from factfin.market_data.retrieval import StructuredState
from factfin.strategy.ast import StrategyAst
from factfin.strategy.render import render

PLACEHOLDERS = ("Prices", "Factors", "News", "Examples", "CurrentStrategy")
MODES = ("generate", "modify")
REGIMES = ("low", "mid", "high")
_PLACEHOLDER = re.compile(r"\{([A-Za-z_]\w*)\}")

EXAMPLES = (
    "when rsi(14) < 30 then buy\nwhen rsi(14) > 70 then sell\nelse hold",
    "when close > sma(50) and macd_hist(12,26,9) > 0 then buy\nwhen close < sma(50) then sell\nelse hold",
)


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str
    mode: str = "generate"
    regime: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TemplateError(f"unknown template mode {self.mode!r}")
        unknown = sorted(set(self.placeholders()) - set(PLACEHOLDERS))
        if unknown:
            raise TemplateError(f"template {self.id}: unknown placeholder {{{unknown[0]}}}")

    def placeholders(self) -> list[str]:
        return _PLACEHOLDER.findall(self.text)


def _num(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{x:.6g}"


def prices_section(sstate: StructuredState) -> str:
    w = sstate.state.window
    return "\n".join(f"{d.isoformat()} open={_num(o)} high={_num(h)} low={_num(lo)} close={_num(c)}"
                     for d, o, h, lo, c in zip(w.dates, w.open, w.high, w.low, w.close))


def factors_section(sstate: StructuredState) -> str:
    return "\n".join(f"{k}: {_num(v)}" for k, v in sstate.state.factor_items())


def news_section(sstate: StructuredState) -> str:
    news = sstate.state.news
    lines = [f"sentiment: {_num(news.sentiment)}", f"dominant topic: {news.dominant_topic}",
             f"events: {', '.join(sorted(news.events)) or 'none'}"]
    lines += [f"- [{snip.kind}] {snip.text}" for snip, _ in sstate.context]
    return "\n".join(lines)


def render_prompt(template: PromptTemplate, sstate: StructuredState | None, current: StrategyAst | None = None,
                  examples: tuple[str, ...] = EXAMPLES) -> str:
    needed = set(template.placeholders())
    if needed & {"Prices", "Factors", "News"} and sstate is None:
        raise TemplateError(f"template {template.id} needs a market state")
    if "CurrentStrategy" in needed and current is None:
        raise TemplateError(f"template {template.id} needs a current strategy")
    makers = {
        "Prices": lambda: prices_section(sstate),
        "Factors": lambda: factors_section(sstate),
        "News": lambda: news_section(sstate),
        "Examples": lambda: "\n\n".join(f"```\n{e}\n```" for e in examples),
        "CurrentStrategy": lambda: render(current),
    }
    values = {name: makers[name]() for name in needed}
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template.text)


_GENERATE = """You write trading rules in a small rule language.
Use only the inputs below. Reply with one fenced block holding the rules.
{regime_note}
Recent prices:
{Prices}

Factors:
{Factors}

News:
{News}

Examples:
{Examples}
"""

_MODIFY = """You revise trading rules in a small rule language.
Use only the inputs below. Reply with one fenced block holding the revised rules.
{regime_note}
Current rules:
```
{CurrentStrategy}
```

Factors:
{Factors}

News:
{News}
"""

_REGIME_NOTES = {
    "low": "Volatility is low: prefer tighter thresholds.",
    "mid": "Volatility is moderate.",
    "high": "Volatility is high: prefer wider thresholds and fewer trades.",
}


def _builtin(mode: str, regime: str) -> PromptTemplate:
    text = (_GENERATE if mode == "generate" else _MODIFY).replace("{regime_note}", _REGIME_NOTES[regime])
    return PromptTemplate(f"{mode}-{regime}", text, mode, regime)


REGISTRY: dict[tuple[str, str], PromptTemplate] = {(m, r): _builtin(m, r) for m in MODES for r in REGIMES}


def volatility_regime(dataset: Dataset, t: int, window: int = 20) -> str:
    """Tercile of the current trailing volatility within its own history up to ``t``."""
    vols = np.asarray(dataset.factor_set([f"volatility({window})"]).values[f"volatility({window})"])[:t + 1]
    hist = vols[np.isfinite(vols)]
    if len(hist) < 3 or not np.isfinite(vols[t]):
        return "mid"
    lo, hi = np.quantile(hist, [1 / 3, 2 / 3])
    v = vols[t]
    return "low" if v <= lo else "high" if v > hi else "mid"


def template_for(mode: str, regime: str) -> PromptTemplate:
    try:
        return REGISTRY[(mode, regime)]
    except KeyError:
        raise TemplateError(f"no template for mode={mode!r} regime={regime!r}") from None
