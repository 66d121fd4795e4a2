"""Rule-based strategy edits used to grow the search tree."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from factfin.market_data.factors import FACTOR_CATALOG
from factfin.rng import derive_seed, make_rng
from factfin.strategy.ast import (
    R_MAX, SWAPPED, Action, And, Compare, Factor, Not, Num, Or, Rule, StrategyAst,
)

MUTATION_KINDS = ("threshold-jitter", "operator-swap", "rule-insert", "rule-delete",
                  "action-flip", "factor-substitute")
MAX_MAGNITUDE = 1.0

# factor families a substitution may move between
SUBSTITUTES: dict[str, list[Factor]] = {
    "oscillator": [Factor("rsi", (n,)) for n in (7, 9, 14, 21)]
    + [Factor(k, (9, 3, 3)) for k in ("kdj_k", "kdj_d", "kdj_j")],
    "price": [Factor("close")] + [Factor(k, (n,)) for k in ("sma", "ema") for n in (5, 10, 20, 50, 100, 200)],
    "return": [Factor("ret", (n,)) for n in (1, 5, 10, 20)],
    "score": [Factor("sentiment")],
}

# (left operand, threshold range or right operand factory) used by rule-insert
_INSERT_TEMPLATES: list[tuple[Factor, tuple[float, float] | None]] = [
    (Factor("rsi", (14,)), (20.0, 80.0)),
    (Factor("rsi", (7,)), (15.0, 85.0)),
    (Factor("kdj_k", (9, 3, 3)), (10.0, 90.0)),
    (Factor("kdj_j", (9, 3, 3)), (0.0, 100.0)),
    (Factor("ret", (5,)), (-0.05, 0.05)),
    (Factor("macd_hist", (12, 26, 9)), None),
    (Factor("close"), None),
    (Factor("sentiment"), (-0.5, 0.5)),
]


@dataclass(frozen=True)
class MutationSpec:
    kind: str
    magnitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MUTATION_KINDS:
            raise ValueError(f"unknown mutation kind {self.kind!r}")
        if not 0.0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ValueError(f"magnitude {self.magnitude} outside [0, {MAX_MAGNITUDE}]")


@dataclass(frozen=True)
class MutationResult:
    ast: StrategyAst
    applied: bool
    kind: str
    note: str = ""


def _count(expr, pred) -> int:
    n = 1 if pred(expr) else 0
    if isinstance(expr, Compare):
        n += _count(expr.left, pred) + _count(expr.right, pred)
    elif isinstance(expr, (And, Or)):
        n += sum(_count(i, pred) for i in expr.items)
    elif isinstance(expr, Not):
        n += _count(expr.item, pred)
    return n


def _rewrite(expr, pred, target: int, fn: Callable, counter: list[int]):
    """Apply ``fn`` to the ``target``-th node (pre-order) satisfying ``pred``."""
    if pred(expr):
        hit = counter[0] == target
        counter[0] += 1
        if hit:
            return fn(expr)
    if isinstance(expr, Compare):
        return Compare(expr.op, _rewrite(expr.left, pred, target, fn, counter),
                       _rewrite(expr.right, pred, target, fn, counter))
    if isinstance(expr, And):
        return And(tuple(_rewrite(i, pred, target, fn, counter) for i in expr.items))
    if isinstance(expr, Or):
        return Or(tuple(_rewrite(i, pred, target, fn, counter) for i in expr.items))
    if isinstance(expr, Not):
        return Not(_rewrite(expr.item, pred, target, fn, counter))
    return expr


def _edit_nth(ast: StrategyAst, pred, rng: np.random.Generator, fn) -> StrategyAst | None:
    counts = [_count(r.condition, pred) for r in ast.rules]
    total = sum(counts)
    if total == 0:
        return None
    pick = int(rng.integers(total))
    rules = list(ast.rules)
    for i, c in enumerate(counts):
        if pick < c:
            rules[i] = Rule(_rewrite(rules[i].condition, pred, pick, fn, [0]), rules[i].action)
            break
        pick -= c
    return StrategyAst(tuple(rules), ast.default, ast.features)


def _jitter(ast, spec, rng):
    if spec.magnitude == 0.0:
        return ast if any(_count(r.condition, lambda n: isinstance(n, Num)) for r in ast.rules) else None

    def fn(num: Num) -> Num:
        step = spec.magnitude * float(rng.standard_normal()) * max(abs(num.value), 1.0)
        return Num(round(num.value + step, 4))

    return _edit_nth(ast, lambda n: isinstance(n, Num), rng, fn)


def _swap(ast, spec, rng):
    return _edit_nth(ast, lambda n: isinstance(n, Compare), rng,
                     lambda c: Compare(SWAPPED[c.op], c.left, c.right))


def _random_rule(rng: np.random.Generator) -> Rule:
    factor, bounds = _INSERT_TEMPLATES[int(rng.integers(len(_INSERT_TEMPLATES)))]
    op = ("<", ">")[int(rng.integers(2))]
    if bounds is None:
        if factor.name == "close":
            right = Factor("sma", (int((5, 10, 20, 50)[int(rng.integers(4))]),))
        else:
            right = Num(0.0)
    else:
        right = Num(round(float(rng.uniform(*bounds)), 2 if bounds[1] > 1 else 4))
    action = (Action.BUY, Action.SELL)[int(rng.integers(2))]
    return Rule(Compare(op, factor, right), action)


def _insert(ast, spec, rng):
    if len(ast.rules) >= R_MAX:
        return None
    pos = int(rng.integers(len(ast.rules) + 1))
    rules = list(ast.rules)
    rules.insert(pos, _random_rule(rng))
    return StrategyAst(tuple(rules), ast.default, ast.features)


def _delete(ast, spec, rng):
    if not ast.rules:
        return None
    pos = int(rng.integers(len(ast.rules)))
    return StrategyAst(ast.rules[:pos] + ast.rules[pos + 1:], ast.default, ast.features)


def _flip(ast, spec, rng):
    target = int(rng.integers(len(ast.rules) + 1))
    current = ast.default if target == len(ast.rules) else ast.rules[target].action
    choices = [a for a in (Action.BUY, Action.SELL, Action.HOLD) if a is not current]
    new = choices[int(rng.integers(2))]
    if target == len(ast.rules):
        return StrategyAst(ast.rules, new, ast.features)
    rules = list(ast.rules)
    rules[target] = Rule(rules[target].condition, new)
    return StrategyAst(tuple(rules), ast.default, ast.features)


def _substitutable(node) -> bool:
    return isinstance(node, Factor) and FACTOR_CATALOG[node.name].scale in SUBSTITUTES \
        and FACTOR_CATALOG[node.name].source != "calendar"


def _substitute(ast, spec, rng):
    def fn(f: Factor) -> Factor:
        pool = [g for g in SUBSTITUTES[FACTOR_CATALOG[f.name].scale] if g != f]
        return pool[int(rng.integers(len(pool)))] if pool else f

    return _edit_nth(ast, _substitutable, rng, fn)


_APPLY = {
    "threshold-jitter": _jitter,
    "operator-swap": _swap,
    "rule-insert": _insert,
    "rule-delete": _delete,
    "action-flip": _flip,
    "factor-substitute": _substitute,
}


def mutate(ast: StrategyAst, spec: MutationSpec) -> MutationResult:
    """Apply exactly one edit of ``spec.kind``; deterministic in (ast, spec).

    When the edit cannot apply (nothing to jitter, deleting from an empty rule
    list, inserting past the rule cap) the input comes back with
    ``applied=False``.
    """
    rng = make_rng(derive_seed(spec.seed, MUTATION_KINDS.index(spec.kind)))
    out = _APPLY[spec.kind](ast, spec, rng)
    if out is None:
        return MutationResult(ast, False, spec.kind, "inapplicable")
    return MutationResult(out, True, spec.kind)
