"""Strategy syntax tree. All nodes are immutable, hashable values."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Iterator, Union

R_MAX = 16


class Action(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"
    HOLD = "hold"

    def __str__(self) -> str:
        return self.value


# fixed order used for distributions and argmax tie-breaks
ACTIONS = (Action.BUY, Action.SELL, Action.HOLD)

COMPARATORS = ("<", "<=", ">", ">=")
SWAPPED = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Factor:
    name: str
    params: tuple[int, ...] = ()

    @property
    def key(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}({','.join(str(p) for p in self.params)})"


Operand = Union[Num, Factor]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Operand
    right: Operand


@dataclass(frozen=True)
class And:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["Expr", ...]


@dataclass(frozen=True)
class Not:
    item: "Expr"


Expr = Union[Compare, And, Or, Not]


@dataclass(frozen=True)
class Rule:
    condition: Expr
    action: Action


@dataclass(frozen=True)
class StrategyAst:
    rules: tuple[Rule, ...]
    default: Action = Action.HOLD
    features: frozenset[str] = frozenset()

    @property
    def id(self) -> str:
        """Content hash of the canonical source text."""
        from factfin.strategy.render import render

        return hashlib.sha256(render(self).encode("utf-8")).hexdigest()[:16]

    def factors(self) -> list[Factor]:
        seen: dict[str, Factor] = {}
        for rule in self.rules:
            for f in iter_factors(rule.condition):
                seen.setdefault(f.key, f)
        return list(seen.values())

    def factor_keys(self) -> list[str]:
        return [f.key for f in self.factors()]


def iter_nodes(expr: Expr) -> Iterator:
    yield expr
    if isinstance(expr, Compare):
        yield expr.left
        yield expr.right
    elif isinstance(expr, (And, Or)):
        for item in expr.items:
            yield from iter_nodes(item)
    elif isinstance(expr, Not):
        yield from iter_nodes(expr.item)


def iter_factors(expr: Expr) -> Iterator[Factor]:
    return (n for n in iter_nodes(expr) if isinstance(n, Factor))


def make_and(items) -> Expr:
    flat: list[Expr] = []
    for it in items:
        flat.extend(it.items if isinstance(it, And) else (it,))
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def make_or(items) -> Expr:
    flat: list[Expr] = []
    for it in items:
        flat.extend(it.items if isinstance(it, Or) else (it,))
    return flat[0] if len(flat) == 1 else Or(tuple(flat))
