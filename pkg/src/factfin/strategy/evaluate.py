"""Strategy evaluation with soft action scores.

A comparison's margin is its signed distance from flipping, in factor-native
units: ``x < y`` scores ``(y - x) / scale`` and ``x > y`` scores
``(x - y) / scale``. ``and`` takes the minimum margin, ``or`` the maximum and
``not`` negates. Each action's activation is the best margin among rules
emitting it; the default action also gets ``-max(rule margins)``, i.e. how far
the state is from any rule firing. The distribution is softmax(activation/tau)
over actions that some rule (or the default) can emit; other actions get 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from factfin.market_data.factors import FACTOR_CATALOG
from factfin.market_data.state import MarketState
from factfin.strategy.ast import ACTIONS, Action, And, Compare, Factor, Not, Num, Or, StrategyAst

# per-unit scale of a margin by factor family; "price" is relative to the current close
SCALES = {"oscillator": 10.0, "return": 0.01, "valuation": 1.0, "score": 0.1, "unit": 1.0}
PRICE_SCALE_FRACTION = 0.01


@dataclass(frozen=True)
class ActionDistribution:
    probs: tuple[float, float, float]  # in ACTIONS order

    def __getitem__(self, action: Action) -> float:
        return self.probs[ACTIONS.index(action)]

    @property
    def confidence(self) -> float:
        return max(self.probs)

    @property
    def argmax(self) -> Action:
        best = max(self.probs)
        return next(a for a, p in zip(ACTIONS, self.probs) if p == best)

    @classmethod
    def one_hot(cls, action: Action) -> "ActionDistribution":
        return cls(tuple(1.0 if a is action else 0.0 for a in ACTIONS))


@dataclass(frozen=True)
class Evaluation:
    action: Action
    distribution: ActionDistribution
    fired_rule: int | None = None
    ready: bool = True

    @property
    def confidence(self) -> float:
        return self.distribution.confidence


class NotReady(Exception):
    pass


def softmax(activations: dict[Action, float], tau: float) -> ActionDistribution:
    live = [a for a in ACTIONS if activations[a] != -math.inf]
    top = max(activations[a] for a in live)
    weights = {a: math.exp((activations[a] - top) / tau) if a in live else 0.0 for a in ACTIONS}
    total = math.fsum(weights.values())
    return ActionDistribution(tuple(weights[a] / total for a in ACTIONS))


def _scale(cmp: Compare, state: MarketState) -> float:
    scale = 0.0
    for side in (cmp.left, cmp.right):
        if isinstance(side, Factor):
            family = FACTOR_CATALOG[side.name].scale
            if family == "price":
                s = PRICE_SCALE_FRACTION * abs(state.close)
            else:
                s = SCALES[family]
            scale = max(scale, s)
    return scale or 1.0


def _operand(op, state: MarketState, cache: dict) -> float:
    if isinstance(op, Num):
        return op.value
    key = op.key
    if key not in cache:
        v = state.value(key)
        if math.isnan(v):
            raise NotReady(key)
        cache[key] = v
    return cache[key]


def condition(expr, state: MarketState, cache: dict | None = None) -> tuple[bool, float]:
    """Truth value and margin of a condition; raises ``NotReady`` on a missing factor."""
    cache = {} if cache is None else cache
    if isinstance(expr, Compare):
        x = _operand(expr.left, state, cache)
        y = _operand(expr.right, state, cache)
        s = _scale(expr, state)
        if expr.op == "<":
            return x < y, (y - x) / s
        if expr.op == "<=":
            return x <= y, (y - x) / s
        if expr.op == ">":
            return x > y, (x - y) / s
        return x >= y, (x - y) / s
    if isinstance(expr, And):
        parts = [condition(i, state, cache) for i in expr.items]
        return all(p[0] for p in parts), min(p[1] for p in parts)
    if isinstance(expr, Or):
        parts = [condition(i, state, cache) for i in expr.items]
        return any(p[0] for p in parts), max(p[1] for p in parts)
    if isinstance(expr, Not):
        truth, margin = condition(expr.item, state, cache)
        return not truth, -margin
    raise TypeError(f"not an expression: {expr!r}")


def evaluate(ast: StrategyAst, state: MarketState, tau: float = 1.0) -> Evaluation:
    """Run the strategy on one state. Missing inputs make the whole strategy hold."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    cache: dict = {}
    try:
        results = [condition(r.condition, state, cache) for r in ast.rules]
    except NotReady:
        return Evaluation(Action.HOLD, ActionDistribution.one_hot(Action.HOLD), None, ready=False)
    fired = next((i for i, (truth, _) in enumerate(results) if truth), None)
    action = ast.rules[fired].action if fired is not None else ast.default
    activation = dict.fromkeys(ACTIONS, -math.inf)
    for rule, (_, margin) in zip(ast.rules, results):
        activation[rule.action] = max(activation[rule.action], margin)
    default_margin = -max(m for _, m in results) if results else 0.0
    activation[ast.default] = max(activation[ast.default], default_margin)
    return Evaluation(action, softmax(activation, tau), fired)
