"""Leakage metrics on paired original/counterfactual predictions.

* PC  - share of pairs whose action is unchanged (exact equality).
* CI  - ``1 - mean |s_orig - s_cf|`` over the consistent pairs only; absent
  (``None``) when no pair is consistent.
* IDS - mean ``KL(P_orig || P_cf)`` in nats, after flooring both
  distributions at ``floor`` and renormalizing.

The objective ``alpha*PC + beta*CI - gamma*IDS`` drops the CI term when CI is
absent. Lower is better: a strategy that reacts to its inputs scores low.
Sums use ``math.fsum`` so results do not depend on pair order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from factfin.counterfactual import ScenarioSet
from factfin.errors import ValidationError
from factfin.strategy.ast import Action, StrategyAst
from factfin.strategy.evaluate import ActionDistribution, evaluate

DEFAULT_FLOOR = 1e-6
DEFAULT_EVAL_POINTS = 30
REPORT_SCHEMA = "factfin.leakage/1"


@dataclass(frozen=True)
class PairedPrediction:
    scenario: str
    t: int
    orig: ActionDistribution
    cf: ActionDistribution
    orig_action: Action
    cf_action: Action

    @property
    def consistent(self) -> bool:
        return self.orig_action is self.cf_action

    @property
    def orig_confidence(self) -> float:
        return self.orig.confidence

    @property
    def cf_confidence(self) -> float:
        return self.cf.confidence


def make_pair(orig: ActionDistribution, cf: ActionDistribution, scenario: str = "", t: int = 0,
              orig_action: Action | None = None, cf_action: Action | None = None) -> PairedPrediction:
    return PairedPrediction(scenario, t, orig, cf, orig_action or orig.argmax, cf_action or cf.argmax)


def _require(pairs: Sequence[PairedPrediction]) -> None:
    if not pairs:
        raise ValidationError("no paired predictions")


def prediction_consistency(pairs: Sequence[PairedPrediction]) -> float:
    _require(pairs)
    return sum(p.consistent for p in pairs) / len(pairs)


def confidence_invariance(pairs: Sequence[PairedPrediction]) -> float | None:
    gaps = [abs(p.orig_confidence - p.cf_confidence) for p in pairs if p.consistent]
    if not gaps:
        return None
    return 1.0 - math.fsum(gaps) / len(gaps)


def floor_distribution(probs: Sequence[float], floor: float = DEFAULT_FLOOR) -> list[float]:
    raised = [max(p, floor) for p in probs]
    total = math.fsum(raised)
    return [p / total for p in raised]


def kl_divergence(p: Sequence[float], q: Sequence[float], floor: float = DEFAULT_FLOOR) -> float:
    p, q = floor_distribution(p, floor), floor_distribution(q, floor)
    return max(0.0, math.fsum(pi * math.log(pi / qi) for pi, qi in zip(p, q)))


def input_dependency(pairs: Sequence[PairedPrediction], floor: float = DEFAULT_FLOOR) -> float:
    _require(pairs)
    return math.fsum(kl_divergence(p.orig.probs, p.cf.probs, floor) for p in pairs) / len(pairs)


def leakage_objective(pc: float, ci: float | None, ids: float,
                      alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0) -> float:
    if min(alpha, beta, gamma) < 0:
        raise ValidationError("objective weights must be >= 0")
    value = alpha * pc - gamma * ids
    if ci is not None:
        value += beta * ci
    return value


def stratified_points(n_bars: int, k: int = DEFAULT_EVAL_POINTS, warmup: int = 0) -> list[int]:
    """``k`` evenly spread bar indices in ``[warmup, n_bars - 1]`` (fewer if the range is short)."""
    lo, hi = warmup, n_bars - 1
    if hi < lo:
        raise ValidationError(f"no bars after warm-up {warmup} (have {n_bars})")
    if k <= 1:
        return [hi]
    span = hi - lo
    return sorted({lo + round(i * span / (k - 1)) for i in range(k)})


def paired_evaluate(ast: StrategyAst, scenario_set: ScenarioSet, points: Iterable[int] | None = None,
                    tau: float = 1.0, warmup: int = 0, k: int = DEFAULT_EVAL_POINTS) -> list[PairedPrediction]:
    """Evaluate ``ast`` on both sides of every scenario at the same bars.

    Without explicit ``points``, each scenario uses ``stratified_points`` over
    its own length; authored single-bar scenarios therefore use their last bar.
    """
    keys = ast.factor_keys()
    fixed = list(points) if points is not None else None
    out: list[PairedPrediction] = []
    for sc, orig, cf in scenario_set.pairs():
        n = min(len(orig), len(cf))
        pts = fixed if fixed is not None else stratified_points(n, k, min(warmup, n - 1))
        fo, fc = orig.factor_set(keys), cf.factor_set(keys)
        for t in pts:
            if not 0 <= t < n:
                raise ValidationError(f"eval point {t} outside scenario {sc.id} (length {n})")
            eo = evaluate(ast, orig.state(t, factors=fo), tau)
            ec = evaluate(ast, cf.state(t, factors=fc), tau)
            out.append(PairedPrediction(sc.id, t, eo.distribution, ec.distribution, eo.action, ec.action))
    return out


@dataclass(frozen=True)
class LeakageReport:
    pc: float
    ci: float | None
    ids: float
    n: int
    m: int
    objective: float
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    strategy_id: str = ""
    scenario_set: str = ""
    floor: float = DEFAULT_FLOOR

    def to_json(self) -> dict:
        a, b, g = self.weights
        return {"schema": REPORT_SCHEMA, "strategy_id": self.strategy_id, "scenario_set": self.scenario_set,
                "pc": self.pc, "ci": self.ci, "ids": self.ids, "n": self.n, "m": self.m,
                "objective": self.objective, "weights": {"alpha": a, "beta": b, "gamma": g}, "floor": self.floor}

    @classmethod
    def from_json(cls, obj: dict) -> "LeakageReport":
        if obj.get("schema") != REPORT_SCHEMA:
            raise ValidationError(f"not a leakage report: {obj.get('schema')!r}")
        w = obj["weights"]
        return cls(obj["pc"], obj["ci"], obj["ids"], obj["n"], obj["m"], obj["objective"],
                   (w["alpha"], w["beta"], w["gamma"]), obj["strategy_id"], obj["scenario_set"], obj["floor"])


CSV_FIELDS = ("strategy_id", "scenario_set", "pc", "ci", "ids", "n", "m", "objective", "alpha", "beta", "gamma")


def leakage_report(pairs: Sequence[PairedPrediction], alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0,
                   floor: float = DEFAULT_FLOOR, strategy_id: str = "", scenario_set: str = "") -> LeakageReport:
    pc = prediction_consistency(pairs)
    ci = confidence_invariance(pairs)
    ids = input_dependency(pairs, floor)
    m = sum(p.consistent for p in pairs)
    return LeakageReport(pc, ci, ids, len(pairs), m, leakage_objective(pc, ci, ids, alpha, beta, gamma),
                         (alpha, beta, gamma), strategy_id, scenario_set, floor)


def write_reports_json(reports: Sequence[LeakageReport], path: str | Path) -> None:
    body = [r.to_json() for r in reports]
    Path(path).write_text(json.dumps(body[0] if len(body) == 1 else body, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def write_reports_csv(reports: Sequence[LeakageReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in reports:
            a, b, g = r.weights
            writer.writerow([r.strategy_id, r.scenario_set, repr(r.pc), "" if r.ci is None else repr(r.ci),
                             repr(r.ids), r.n, r.m, repr(r.objective), a, b, g])


def argmin_objective(candidates: Sequence[tuple[str, float]]) -> str:
    """Id with the lowest objective; ties go to the lexicographically smallest id."""
    if not candidates:
        raise ValidationError("no candidates")
    return min(candidates, key=lambda c: (c[1], c[0]))[0]
