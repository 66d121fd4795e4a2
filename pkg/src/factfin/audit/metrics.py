"""Memorization audit metrics computed from supplied prediction logs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from factfin.errors import SchemaError, UndefinedBaselineError, ValidationError


def bias_score(f_train: Sequence[float], p_score: Sequence[float]) -> float:
    """Frequency-weighted prediction score over S stocks, divided by S, minus 1/S.

    Zero when scores do not depend on how often a stock was seen in training
    and all scores equal 1; negative when frequent stocks score worse.
    """
    s = len(f_train)
    if s == 0 or len(p_score) != s:
        raise ValidationError("need one prediction score per stock and at least one stock")
    if any(f < 0 for f in f_train):
        raise ValidationError("training frequencies must be >= 0")
    total = math.fsum(f_train)
    if total <= 0:
        raise ValidationError("training frequencies sum to zero")
    return math.fsum(f * p for f, p in zip(f_train, p_score)) / total / s - 1.0 / s


def _cosine(a: Sequence[float], b: Sequence[float], t: int) -> float:
    if len(a) != len(b):
        raise ValidationError(f"vectors at t={t} differ in length")
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(x * x for x in b))
    if na == 0 or nb == 0:
        raise ValidationError(f"zero vector at t={t}")
    return math.fsum(x * y for x, y in zip(a, b)) / (na * nb)


def memory_score(model: Sequence[Sequence[float]], hist: Sequence[Sequence[float]]) -> float:
    """Mean cosine similarity between model predictions and historical outcomes."""
    if not model or len(model) != len(hist):
        raise ValidationError("need T >= 1 aligned model/historical vectors")
    return math.fsum(_cosine(a, b, t) for t, (a, b) in enumerate(zip(model, hist))) / len(model)


def generalization_change(acc_pre: float, acc_post: float) -> float:
    """Relative change of unseen-data accuracy, in percent."""
    if acc_pre == 0:
        raise UndefinedBaselineError("generalization change undefined for zero baseline accuracy")
    return (acc_post - acc_pre) / acc_pre * 100.0


@dataclass(frozen=True)
class AuditInputs:
    f_train: dict[str, float]
    p_score: dict[str, float]
    model_vectors: list[list[float]]
    hist_vectors: list[list[float]]
    acc_pre: float | None = None
    acc_post: float | None = None

    @classmethod
    def from_json(cls, obj: Mapping) -> "AuditInputs":
        known = {"f_train", "p_score", "model_vectors", "hist_vectors", "acc_pre", "acc_post"}
        extra = set(obj) - known
        if extra:
            raise SchemaError(f"unknown audit field {sorted(extra)[0]!r}", sorted(extra)[0])
        f, p = dict(obj.get("f_train", {})), dict(obj.get("p_score", {}))
        if set(f) != set(p):
            raise SchemaError("f_train and p_score must name the same stocks", "p_score")
        if any(not 0 <= v <= 1 for v in p.values()):
            raise SchemaError("prediction scores must lie in [0, 1]", "p_score")
        return cls(f, p, list(obj.get("model_vectors", [])), list(obj.get("hist_vectors", [])),
                   obj.get("acc_pre"), obj.get("acc_post"))

    @classmethod
    def load(cls, path: str | Path) -> "AuditInputs":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def audit_report(inputs: AuditInputs) -> dict:
    stocks = sorted(inputs.f_train)
    out: dict = {"schema": "factfin.audit/1", "stocks": len(stocks)}
    out["bias"] = bias_score([inputs.f_train[s] for s in stocks], [inputs.p_score[s] for s in stocks]) if stocks else None
    out["memory"] = memory_score(inputs.model_vectors, inputs.hist_vectors) if inputs.model_vectors else None
    if inputs.acc_pre is not None and inputs.acc_post is not None:
        out["generalization_change_pct"] = generalization_change(inputs.acc_pre, inputs.acc_post)
    else:
        out["generalization_change_pct"] = None
    return out
