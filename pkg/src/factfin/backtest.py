"""Single-asset long/flat backtester and performance metrics.

Execution model: the strategy sees bar ``t`` and its order fills at the open
of bar ``t+1``. A buy spends all cash: ``shares = cash * (1 - cost) / (open * (1 + slippage))``.
A sell liquidates: ``cash = shares * open * (1 - slippage) * (1 - cost)``.
Equity is marked at each close; the final position is not liquidated.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from factfin.errors import (
    DegenerateVolatilityError, InsufficientDataError, UndefinedBaselineError, ValidationError,
)
from factfin.market_data.dataset import Dataset
from factfin.strategy.ast import Action, StrategyAst
from factfin.strategy.evaluate import evaluate

SQRT_252 = math.sqrt(252.0)
SQRT_365 = math.sqrt(365.0)


@dataclass(frozen=True)
class CostModel:
    cost: float = 0.001
    slippage: float = 0.0005
    risk_free: float = 0.0  # annualized

    def __post_init__(self):
        for name in ("cost", "slippage", "risk_free"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.1:
                raise ValidationError(f"{name}={v} must be in [0, 0.1)")


ZERO_COST = CostModel(0.0, 0.0, 0.0)


@dataclass
class BacktestResult:
    equity: list[float]
    returns: list[float]
    actions: list[str]
    fills: list[dict] = field(default_factory=list)
    total_return: float = 0.0
    sharpe: float | None = None
    max_drawdown: float = 0.0
    dates: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "schema": "factfin.backtest/1",
            "total_return": self.total_return,
            "sharpe": self.sharpe,
            "max_drawdown": self.max_drawdown,
            "equity": self.equity,
            "returns": self.returns,
            "actions": self.actions,
            "fills": self.fills,
            "dates": self.dates,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_equity_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "equity"])
            for d, e in zip(self.dates, self.equity):
                w.writerow([d, repr(e)])


def total_return(equity: Sequence[float]) -> float:
    if len(equity) == 0:
        raise ValueError("empty equity curve")
    if not equity[0] > 0:
        raise ValueError("initial equity must be positive")
    return (equity[-1] - equity[0]) / equity[0]


def sharpe(returns: Sequence[float], risk_free: float = 0.0, annualization: float = SQRT_252) -> float:
    """Mean per-period excess return over its sample std, times ``annualization``.

    ``risk_free`` is a per-period rate here; ``run`` converts the annual rate.
    """
    n = len(returns)
    if n < 2:
        raise InsufficientDataError("sharpe needs at least 2 returns")
    excess = [r - risk_free for r in returns]
    mean = math.fsum(excess) / n
    var = math.fsum((x - mean) ** 2 for x in excess) / (n - 1)
    sd = math.sqrt(var)
    if sd == 0.0 or sd <= 1e-15 * max(1.0, abs(mean)):
        raise DegenerateVolatilityError("return volatility is zero")
    return mean / sd * annualization


def max_drawdown(equity: Sequence[float]) -> float:
    peak = -math.inf
    worst = 0.0
    for v in equity:
        peak = max(peak, v)
        worst = max(worst, (peak - v) / peak)
    return worst


def decay_rate(pre: float, post: float) -> float:
    """Relative drop from ``pre`` to ``post`` in percent."""
    if pre == 0:
        raise UndefinedBaselineError("decay rate undefined for a zero baseline")
    return (pre - post) / pre * 100.0


def run(ast: StrategyAst, dataset: Dataset, cost: CostModel = CostModel(), initial: float = 100_000.0,
        annualization: float = SQRT_252, tau: float = 1.0) -> BacktestResult:
    if len(dataset) < 2:
        raise InsufficientDataError("backtest needs at least 2 bars")
    if not initial > 0:
        raise ValidationError("initial capital must be positive")
    series = dataset.series
    fs = dataset.factor_set(ast.factor_keys())
    opens, closes = series.open, series.close
    cash, shares = float(initial), 0.0
    equity = [cash]
    actions: list[str] = []
    fills: list[dict] = []
    for t in range(len(series) - 1):
        action = evaluate(ast, dataset.state(t, factors=fs), tau).action
        actions.append(action.value)
        px = float(opens[t + 1])
        if action is Action.BUY and shares == 0.0:
            fill = px * (1 + cost.slippage)
            shares = cash * (1 - cost.cost) / fill
            fills.append({"t": t + 1, "side": "buy", "price": fill, "shares": shares})
            cash = 0.0
        elif action is Action.SELL and shares > 0.0:
            fill = px * (1 - cost.slippage)
            cash = shares * fill * (1 - cost.cost)
            fills.append({"t": t + 1, "side": "sell", "price": fill, "shares": shares})
            shares = 0.0
        equity.append(cash + shares * float(closes[t + 1]))
    returns = [equity[i] / equity[i - 1] - 1.0 for i in range(1, len(equity))]
    per_period_rf = cost.risk_free / (annualization ** 2) if annualization else 0.0
    try:
        sr = sharpe(returns, per_period_rf, annualization)
    except (DegenerateVolatilityError, InsufficientDataError):
        sr = None
    return BacktestResult(equity, returns, actions, fills, total_return(equity), sr,
                          max_drawdown(equity), [d.isoformat() for d in series.dates])
