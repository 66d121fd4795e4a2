from __future__ import annotations

import json

import httpx
import pytest

from factfin.errors import GenerationError, TemplateError
from factfin.generator import (
    REGISTRY, GatewayBackend, GatewayConfig, GatewayContractError, GatewayStatusError, GatewayTimeout,
    GatewayUnreachable, GeneratorExpander, GeneratorRequest, PromptTemplate, ReplayBackend, TemplateBackend,
    extract_block, generate, render_prompt, template_for, volatility_regime,
)
from factfin.market_data.retrieval import SnippetIndex, Snippet, retrieve_context
from factfin.search import MCTS, SearchConfig
from factfin.strategy import parse, render


@pytest.fixture
def sstate(walk_ds):
    corpus = [Snippet("a", "SYN earnings beat and momentum"), Snippet("b", "Technology: +1.2%", "sector")]
    return retrieve_context(walk_ds.state(200), SnippetIndex(corpus), k=2)


class Scripted:
    """Backend that replays fixed replies and records the prompts it saw."""

    def __init__(self, *replies: str):
        self.replies = list(replies)
        self.prompts: list[str] = []

    def complete(self, request: GeneratorRequest) -> str:
        self.prompts.append(request.prompt)
        return self.replies.pop(0)


def test_verbatim_template():
    assert render_prompt(PromptTemplate("plain", "no placeholders here"), None) == "no placeholders here"


def test_unknown_placeholder():
    with pytest.raises(TemplateError, match="Volume"):
        PromptTemplate("bad", "show {Volume}")


def test_missing_state_or_strategy():
    with pytest.raises(TemplateError):
        render_prompt(PromptTemplate("f", "{Factors}"), None)
    with pytest.raises(TemplateError):
        render_prompt(PromptTemplate("m", "{CurrentStrategy}", "modify"), None)


def test_factors_in_canonical_order(sstate):
    text = render_prompt(PromptTemplate("f", "{Factors}"), sstate)
    names = [line.split(":")[0] for line in text.splitlines()]
    assert names == sorted(names) and "rsi(14)" in names and "sma(50)" in names


def test_current_strategy_substitution():
    ast = parse("when rsi(14) < 30 then buy\nelse hold")
    assert render_prompt(PromptTemplate("m", "{CurrentStrategy}", "modify"), None, ast) == render(ast)


def test_registry_and_regime(walk_ds):
    assert set(REGISTRY) == {(m, r) for m in ("generate", "modify") for r in ("low", "mid", "high")}
    assert volatility_regime(walk_ds, 5) == "mid"
    assert {volatility_regime(walk_ds, t) for t in range(30, 300)} == {"low", "mid", "high"}
    with pytest.raises(TemplateError):
        template_for("generate", "extreme")


def test_extract_block():
    assert extract_block("intro\n```dsl\nelse hold\n```\n```\nelse buy\n```") == "else hold"
    assert extract_block("  else sell \n") == "else sell"


def test_template_backend_deterministic(sstate):
    tpl = template_for("generate", "mid")
    a = generate(tpl, sstate, TemplateBackend())
    b = generate(tpl, sstate, TemplateBackend())
    assert a.ast == b.ast and a.attempts == 1 and a.response.status == "ok"
    assert "rsi(14) < 30" in render(a.ast)
    hi = generate(template_for("generate", "high"), sstate, TemplateBackend(), regime="high")
    assert "rsi(14) < 25" in render(hi.ast)


def test_stub_else_hold(sstate):
    res = generate(template_for("generate", "mid"), sstate, Scripted("```\nelse hold\n```"))
    assert res.ast.rules == ()


def test_retry_after_parse_error(sstate):
    stub = Scripted("I think you should buy", "```\nwhen rsi(14) < 30 then buy\nelse hold\n```")
    res = generate(template_for("generate", "mid"), sstate, stub)
    assert res.attempts == 2
    assert "could not be parsed" in stub.prompts[1] and "could not be parsed" not in stub.prompts[0]


def test_generation_error_after_three_failures(sstate):
    with pytest.raises(GenerationError) as exc:
        generate(template_for("generate", "mid"), sstate, Scripted("x", "y", "when"))
    assert exc.value.attempts == 3


def test_modify_mode_produces_new_valid_strategy(sstate):
    cur = parse("when rsi(14) < 30 then buy\nwhen rsi(14) > 70 then sell\nelse hold")
    out = {generate(template_for("modify", "mid"), sstate, TemplateBackend(), current=cur, seed=s).ast for s in range(5)}
    assert len(out) > 1 and all(a != cur for a in out)


def test_generator_expander_in_search(sstate, walk_ds):
    root = parse("when rsi(14) < 30 then buy\nwhen rsi(14) > 70 then sell\nelse hold")
    tree = MCTS(root, lambda a: 0.5, SearchConfig(width=2), GeneratorExpander(TemplateBackend(), sstate))
    tree.run(5)
    assert len(tree.root.children) == 2


# -- gateway ------------------------------------------------------------------------

def completion(text: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def gateway(handler, **kw) -> GatewayBackend:
    cfg = GatewayConfig("http://llm.test/v1/chat/completions", "test-model", **kw)
    return GatewayBackend(cfg, httpx.MockTransport(handler), sleep=lambda s: None, clock=lambda: "T")


def test_gateway_echo(monkeypatch):
    monkeypatch.setenv("FACTFIN_LLM_KEY", "secret")
    seen = {}

    def handler(req: httpx.Request) -> httpx.Response:
        seen["auth"] = req.headers.get("authorization")
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json=completion("```\nelse hold\n```"))

    gw = gateway(handler)
    assert gw.complete(GeneratorRequest("hello", temperature=0.7)) == "```\nelse hold\n```"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["temperature"] == 0.7 and seen["body"]["messages"][-1]["content"] == "hello"


def test_gateway_retries_server_errors(tmp_path):
    codes = iter([500, 500, 200])

    def handler(req):
        code = next(codes)
        return httpx.Response(code, json=completion("else hold") if code == 200 else {"error": "boom"})

    gw = gateway(handler, transcript=str(tmp_path / "t.jsonl"))
    assert gw.complete(GeneratorRequest("p")) == "else hold"
    assert gw.attempts == 3
    recs = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert [r["attempt"] for r in recs] == [1, 2, 3] and "content" in recs[-1]["response"]


def test_gateway_does_not_retry_client_errors():
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(401, text="nope")

    with pytest.raises(GatewayStatusError) as exc:
        gateway(handler).complete(GeneratorRequest("p"))
    assert exc.value.status == 401 and len(calls) == 1


def test_gateway_unreachable_and_timeout():
    def refuse(req):
        raise httpx.ConnectError("refused", request=req)

    gw = gateway(refuse, max_attempts=2)
    with pytest.raises(GatewayUnreachable):
        gw.complete(GeneratorRequest("p"))
    assert gw.attempts == 2

    def slow(req):
        raise httpx.ReadTimeout("slow", request=req)

    with pytest.raises(GatewayTimeout):
        gateway(slow).complete(GeneratorRequest("p"))


def test_gateway_contract_violation():
    with pytest.raises(GatewayContractError):
        gateway(lambda req: httpx.Response(200, json={"choices": []})).complete(GeneratorRequest("p"))


def test_gateway_failure_becomes_generation_error(sstate):
    gw = gateway(lambda req: httpx.Response(503, text="down"))
    with pytest.raises(GenerationError) as exc:
        generate(template_for("generate", "mid"), sstate, gw)
    assert isinstance(exc.value.__cause__, GatewayStatusError)


def test_transcript_replay_is_exact(tmp_path, sstate):
    path = tmp_path / "t.jsonl"
    replies = iter(["garbage", "```\nwhen rsi(14) < 28 then buy\nelse hold\n```"])
    gw = gateway(lambda req: httpx.Response(200, json=completion(next(replies))), transcript=str(path))
    live = generate(template_for("generate", "mid"), sstate, gw)
    replayed = generate(template_for("generate", "mid"), sstate, ReplayBackend(path))
    assert replayed.ast == live.ast and replayed.attempts == live.attempts == 2
    assert replayed.response.text == live.response.text
