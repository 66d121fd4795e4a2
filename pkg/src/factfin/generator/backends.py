"""Generation backends and the generate-parse-retry loop."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Protocol

from factfin.errors import GenerationError, ParseError
from factfin.generator.gateway import GatewayError
from factfin.generator.templates import PromptTemplate, render_prompt
from factfin.market_data.retrieval import StructuredState
from factfin.rng import derive_seed
from factfin.strategy.ast import StrategyAst
from factfin.strategy.mutate import MutationSpec, mutate
from factfin.strategy.parser import parse
from factfin.strategy.render import render

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.7
MAX_ATTEMPTS = 3
_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)

# (oversold, overbought) rsi thresholds per volatility regime
REGIME_THRESHOLDS = {"low": (35, 65), "mid": (30, 70), "high": (25, 75)}


@dataclass(frozen=True)
class GeneratorRequest:
    prompt: str
    mode: str = "generate"
    temperature: float = DEFAULT_TEMPERATURE
    timeout: float = 30.0
    attempt: int = 1
    seed: int = 0
    regime: str = "mid"
    state: StructuredState | None = field(default=None, compare=False)
    current: StrategyAst | None = field(default=None, compare=False)


@dataclass(frozen=True)
class GeneratorResponse:
    text: str
    source: str | None
    status: str  # "ok" or the parse diagnostic
    ast: StrategyAst | None = None


class Backend(Protocol):
    def complete(self, request: GeneratorRequest) -> str: ...


def extract_block(text: str) -> str:
    """First fenced block, or the whole text when there is no fence."""
    m = _FENCE.search(text)
    return (m.group(1) if m else text).strip()


def _prompt_seed(prompt: str, seed: int) -> int:
    return derive_seed(seed, int.from_bytes(hashlib.sha256(prompt.encode()).digest()[:8], "big"))


class TemplateBackend:
    """Deterministic backend: fills an RSI mean-reversion skeleton from state statistics.

    Modify requests jitter the current strategy's thresholds with a seed taken
    from the request, so distinct seeds give distinct edits.
    """

    def complete(self, request: GeneratorRequest) -> str:
        if request.mode == "modify" and request.current is not None:
            res = mutate(request.current, MutationSpec("threshold-jitter", 0.1, _prompt_seed(request.prompt, request.seed)))
            return f"```\n{render(res.ast)}\n```"
        lo, hi = REGIME_THRESHOLDS.get(request.regime, REGIME_THRESHOLDS["mid"])
        lines = []
        if request.state is not None:
            st = request.state.state
            if request.state.state.news.sentiment <= -0.5:
                lines.append("when sentiment < -0.5 then sell")
            sma50 = st.factors.get("sma(50)", math.nan)
            if not math.isnan(sma50) and st.close > sma50:
                lines.append(f"when rsi(14) < {lo + 5} and close > sma(50) then buy")
        lines += [f"when rsi(14) < {lo} then buy", f"when rsi(14) > {hi} then sell", "else hold"]
        return "```\n" + "\n".join(lines) + "\n```"


@dataclass
class GenerationResult:
    ast: StrategyAst
    response: GeneratorResponse
    attempts: int
    prompt: str


def respond(text: str) -> GeneratorResponse:
    source = extract_block(text)
    try:
        ast = parse(source)
    except ParseError as exc:
        return GeneratorResponse(text, source, str(exc))
    return GeneratorResponse(text, source, "ok", ast)


def generate(template: PromptTemplate, sstate: StructuredState | None, backend: Backend,
             current: StrategyAst | None = None, regime: str = "mid", seed: int = 0,
             temperature: float = DEFAULT_TEMPERATURE, max_attempts: int = MAX_ATTEMPTS) -> GenerationResult:
    """Render, call the backend, extract and parse; re-prompt with the parse error on failure."""
    base = render_prompt(template, sstate, current)
    prompt = base
    last = "no attempts made"
    for attempt in range(1, max_attempts + 1):
        req = GeneratorRequest(prompt, template.mode, temperature, attempt=attempt, seed=seed, regime=regime,
                               state=sstate, current=current)
        try:
            text = backend.complete(req)
        except GatewayError as exc:
            raise GenerationError(f"gateway failure: {exc}", str(exc), attempt) from exc
        resp = respond(text)
        if resp.status == "ok":
            return GenerationResult(resp.ast, resp, attempt, prompt)
        last = resp.status
        log.info("generation attempt %d did not parse: %s", attempt, last)
        prompt = (f"{base}\n\nYour previous reply could not be parsed: {last}\n"
                  "Reply with exactly one fenced block of valid rules.")
    raise GenerationError(f"no valid strategy after {max_attempts} attempts", last, max_attempts)
