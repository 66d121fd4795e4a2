"""Tokenizer and recursive-descent parser for strategy source (docs/grammar.ebnf)."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from factfin.errors import ConfigurationError, ParseError
from factfin.market_data.factors import FACTOR_CATALOG, FactorSpec
from factfin.strategy.ast import (
    COMPARATORS, R_MAX, Action, Compare, Factor, Not, Num, Rule, StrategyAst, make_and, make_or,
)

KEYWORDS = {"when", "then", "else", "and", "or", "not", "use", "buy", "sell", "hold"}
FEATURES = {"calendar"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<|>)
  | (?P<punct>[(),])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind not in ("ws", "comment"):
            text = m.group()
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str, allow_calendar: bool):
        self.tokens = tokenize(source)
        self.i = 0
        self.allow_calendar = allow_calendar
        self.features: set[str] = set()

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.column)

    def at(self, kind: str, text: str | None = None) -> bool:
        return self.tok.kind == kind and (text is None or self.tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        if not self.at(kind, text):
            want = text or kind
            got = self.tok.text or "end of input"
            raise self.error(f"expected {want!r}, got {got!r}")
        tok = self.tok
        self.i += 1
        return tok

    def program(self) -> StrategyAst:
        while self.at("kw", "use"):
            self.i += 1
            tok = self.expect("ident")
            if tok.text not in FEATURES:
                raise self.error(f"unknown feature {tok.text!r}", tok)
            if tok.text == "calendar" and not self.allow_calendar:
                raise self.error("calendar features are disabled for this parse", tok)
            self.features.add(tok.text)
        rules = []
        while self.at("kw", "when"):
            self.i += 1
            cond = self.expr()
            self.expect("kw", "then")
            rules.append(Rule(cond, self.action()))
            if len(rules) > R_MAX:
                raise self.error(f"more than {R_MAX} rules")
        if not self.at("kw", "else"):
            if self.at("eof"):
                raise self.error("missing 'else' clause")
            raise self.error(f"expected 'when' or 'else', got {self.tok.text!r}")
        self.i += 1
        default = self.action()
        if not self.at("eof"):
            raise self.error(f"unexpected {self.tok.text!r} after else clause")
        return StrategyAst(tuple(rules), default, frozenset(self.features))

    def action(self) -> Action:
        tok = self.tok
        if tok.kind == "kw" and tok.text in ("buy", "sell", "hold"):
            self.i += 1
            return Action(tok.text)
        raise self.error(f"expected buy, sell or hold, got {tok.text or 'end of input'!r}")

    def expr(self):
        items = [self.and_expr()]
        while self.at("kw", "or"):
            self.i += 1
            items.append(self.and_expr())
        return make_or(items)

    def and_expr(self):
        items = [self.not_expr()]
        while self.at("kw", "and"):
            self.i += 1
            items.append(self.not_expr())
        return make_and(items)

    def not_expr(self):
        if self.at("kw", "not"):
            self.i += 1
            return Not(self.not_expr())
        if self.at("punct", "("):
            self.i += 1
            inner = self.expr()
            self.expect("punct", ")")
            return inner
        left = self.operand()
        if not self.at("op"):
            raise self.error(f"expected comparison operator, got {self.tok.text or 'end of input'!r}")
        op = self.tok.text
        assert op in COMPARATORS
        self.i += 1
        return Compare(op, left, self.operand())

    def operand(self):
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            value = float(tok.text)
            if not math.isfinite(value):
                raise self.error(f"threshold {tok.text} is not finite", tok)
            return Num(value)
        if tok.kind != "ident":
            raise self.error(f"expected a number or factor, got {tok.text or 'end of input'!r}")
        self.i += 1
        name = tok.text
        params: list[int] = []
        if self.at("punct", "("):
            self.i += 1
            if not self.at("punct", ")"):
                params.append(self._int())
                while self.at("punct", ","):
                    self.i += 1
                    params.append(self._int())
            self.expect("punct", ")")
        definition = FACTOR_CATALOG.get(name)
        if definition is None:
            raise self.error(f"unknown factor {name!r}", tok)
        if definition.source == "calendar" and "calendar" not in self.features:
            raise self.error(f"factor {name!r} needs 'use calendar'", tok)
        try:
            spec = FactorSpec.make(name, params)
        except ConfigurationError as exc:
            raise self.error(str(exc), tok) from None
        return Factor(spec.name, spec.params)

    def _int(self) -> int:
        tok = self.expect("number")
        if not re.fullmatch(r"\d+", tok.text):
            raise self.error(f"factor parameter must be a positive integer, got {tok.text}", tok)
        return int(tok.text)


def parse(source: str, allow_calendar: bool = False) -> StrategyAst:
    """Parse strategy text. Raises ``ParseError`` with line/column on any problem."""
    return _Parser(source, allow_calendar).program()
