"""Graded scoring of benchmark question/answer pairs.

Every item earns 0, 0.5 or 1 point:

* price   - 1 inside the full band, 0.5 inside the half band. Bands default
  to +-1% and +-3% of the truth, rounded half-up to cents.
* trend   - 0.5 for the right direction, plus 0.5 when the signed move is
  within ``tolerance_pp`` percentage points of the truth.
* event   - 1 when every required concept set is hit, 0.5 when every partial
  set is hit. A concept set is hit when any of its terms appears: alphabetic
  terms match word prefixes (case-insensitive), other terms match as substrings.
* market  - symbol items: 1 for a full-credit symbol, 0.5 for a half-credit
  one. Numeric items use price-style bands.

Free-text answers are reduced to a payload first (see ``extract_*``).
Accuracy is ``sum(points * weight) / N``.
"""

from __future__ import annotations

import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from factfin.errors import InputError, ParseError, SchemaError

CATEGORIES = ("price", "trend", "event", "market")
FULL_PCT, HALF_PCT = Decimal("0.01"), Decimal("0.03")
DEFAULT_TOLERANCE_PP = 5.0

DOWN_WORDS = ("fell", "fall", "drop", "declin", "lose", "losing", "loss", "lost", "decreas", "slid", "slump",
              "sank", "sink", "plung", "tumbl", "down", "lower", "negative")
UP_WORDS = ("rise", "rising", "rose", "risen", "gain", "increas", "climb", "rall", "up", "higher", "advanc",
            "surg", "rebound", "jump", "positive")


class ScoringError(InputError):
    pass


def price_bands(value: float, full: Decimal = FULL_PCT, half: Decimal = HALF_PCT) -> tuple[tuple[float, float], tuple[float, float]]:
    v = Decimal(repr(value))
    cent = Decimal("0.01")

    def band(p: Decimal) -> tuple[float, float]:
        lo, hi = sorted((v * (1 - p), v * (1 + p)))
        return float(lo.quantize(cent, ROUND_HALF_UP)), float(hi.quantize(cent, ROUND_HALF_UP))
    return band(full), band(half)


@dataclass(frozen=True)
class QaItem:
    id: str
    category: str
    question: str
    truth: Mapping[str, Any]
    rule: Mapping[str, Any] = field(default_factory=dict)
    weight: float = 1.0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise SchemaError(f"item {self.id}: unknown category {self.category!r}", "category")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise SchemaError(f"item {self.id}: weight must be finite and >= 0", "weight")
        if self.bands() is not None:
            (fl, fh), (hl, hh) = self.bands()
            if not (hl <= fl <= fh <= hh):
                raise SchemaError(f"item {self.id}: full band must sit inside the half band", "rule")
        if self.category == "market" and "symbol" in self.truth:
            overlap = set(self.rule.get("full", ())) & set(self.rule.get("half", ()))
            if overlap:
                raise SchemaError(f"item {self.id}: symbols in both credit sets: {sorted(overlap)}", "rule")
        if self.category == "trend":
            if self.truth.get("direction") not in ("up", "down", "flat"):
                raise SchemaError(f"item {self.id}: trend direction must be up, down or flat", "truth")
            if not math.isfinite(float(self.truth.get("magnitude", math.nan))):
                raise SchemaError(f"item {self.id}: trend magnitude must be finite", "truth")

    @property
    def numeric(self) -> bool:
        return self.category == "price" or (self.category == "market" and "value" in self.truth)

    def bands(self) -> tuple[tuple[float, float], tuple[float, float]] | None:
        if not self.numeric:
            return None
        if "full" in self.rule:
            return tuple(self.rule["full"]), tuple(self.rule["half"])
        return price_bands(float(self.truth["value"]))

    @classmethod
    def from_json(cls, obj: Mapping) -> "QaItem":
        known = {"id", "category", "question", "truth", "rule", "weight"}
        extra = set(obj) - known
        if extra:
            raise SchemaError(f"unknown item field {sorted(extra)[0]!r}", sorted(extra)[0])
        for name in ("id", "category", "question", "truth"):
            if name not in obj:
                raise SchemaError(f"item lacks {name!r}", name)
        return cls(obj["id"], obj["category"], obj["question"], dict(obj["truth"]), dict(obj.get("rule", {})),
                   float(obj.get("weight", 1.0)))


@dataclass(frozen=True)
class AnswerRecord:
    item: str
    answer: Any


# -- free-text extraction ------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")
_DOLLAR = re.compile(r"\$\s*(-?\d[\d,]*(?:\.\d+)?)")
_DECIMAL = re.compile(r"(?<![\w.])-?\d[\d,]*\.\d+")
_PERCENT = re.compile(r"([-+]?\d+(?:\.\d+)?)\s*%")
_TICKER = re.compile(r"\b[A-Z]{1,5}\b")


def _words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def _num(s: str) -> float:
    return float(s.replace(",", ""))


def extract_price(text: str) -> float | None:
    m = _DOLLAR.search(text) or _DECIMAL.search(text)
    return _num(m.group(1) if m.re is _DOLLAR else m.group(0)) if m else None


def _direction_before(text: str, end: int) -> str | None:
    for w in reversed(_words(text[:end])):
        if any(w.startswith(d) for d in DOWN_WORDS):
            return "down"
        if any(w.startswith(u) for u in UP_WORDS):
            return "up"
    return None


def extract_trend(text: str) -> tuple[str | None, float | None]:
    """Direction word nearest before the first percentage, and that percentage."""
    m = _PERCENT.search(text)
    if m is None:
        return _direction_before(text, len(text)), None
    return _direction_before(text, m.start()), float(m.group(1))


def extract_signed_percent(text: str) -> float | None:
    m = _PERCENT.search(text)
    if m is None:
        return None
    value = float(m.group(1))
    if value > 0 and not m.group(1).startswith("+") and _direction_before(text, m.start()) == "down":
        value = -value
    return value


def extract_symbol(text: str, candidates: Iterable[str] = ()) -> str | None:
    cands = set(candidates)
    tokens = _TICKER.findall(text)
    for tok in tokens:
        if tok in cands:
            return tok
    return next((t for t in tokens if len(t) >= 2), None)


def concept_hit(text: str, terms: Sequence[str]) -> bool:
    low = text.lower()
    words = _words(text)
    for term in terms:
        t = term.lower()
        if not t.replace(" ", "").replace("-", "").isalpha():
            if t in low:
                return True
            continue
        parts = _words(t)
        n = len(parts)
        for i in range(len(words) - n + 1):
            if all(words[i + j].startswith(parts[j]) for j in range(n)):
                return True
    return False


# -- scoring ---------------------------------------------------------------------------

def _band_points(x: float, bands) -> float:
    (fl, fh), (hl, hh) = bands
    if fl <= x <= fh:
        return 1.0
    if hl <= x <= hh:
        return 0.5
    return 0.0


def _sign(direction: str) -> float:
    return {"up": 1.0, "down": -1.0, "flat": 0.0}[direction]


def score_answer(item: QaItem, answer: AnswerRecord | Any) -> float:
    payload = answer.answer if isinstance(answer, AnswerRecord) else answer
    if payload is None:
        return 0.0
    cat = item.category
    if item.numeric:
        if isinstance(payload, str):
            payload = extract_price(payload) if cat == "price" else extract_signed_percent(payload)
            if payload is None:
                return 0.0
        if isinstance(payload, bool) or not isinstance(payload, (int, float)):
            raise ScoringError(f"item {item.id}: expected a number, got {type(payload).__name__}")
        return _band_points(float(payload), item.bands())
    if cat == "trend":
        if isinstance(payload, str):
            direction, magnitude = extract_trend(payload)
        elif isinstance(payload, Mapping) and "direction" in payload:
            direction, magnitude = payload["direction"], payload.get("magnitude")
        else:
            raise ScoringError(f"item {item.id}: expected text or a direction/magnitude object")
        if direction != item.truth["direction"]:
            return 0.0
        points = 0.5
        if magnitude is not None:
            truth = float(item.truth["magnitude"])
            signed = _sign(direction) * abs(float(magnitude)) if direction != "flat" else float(magnitude)
            if abs(signed - truth) <= float(item.rule.get("tolerance_pp", DEFAULT_TOLERANCE_PP)):
                points += 0.5
        return points
    if cat == "event":
        if not isinstance(payload, str):
            raise ScoringError(f"item {item.id}: expected free text")
        required = item.rule.get("required", [])
        partial = item.rule.get("partial", [])
        if required and all(concept_hit(payload, terms) for terms in required):
            return 1.0
        if partial and all(concept_hit(payload, terms) for terms in partial):
            return 0.5
        return 0.0
    # market, symbol form
    if not isinstance(payload, str):
        raise ScoringError(f"item {item.id}: expected a symbol or text")
    full, half = item.rule.get("full", []), item.rule.get("half", [])
    symbol = payload.strip().upper() if re.fullmatch(r"\s*[A-Za-z.]{1,6}\s*", payload) else \
        extract_symbol(payload, list(full) + list(half))
    if symbol in full:
        return 1.0
    if symbol in half:
        return 0.5
    return 0.0


@dataclass
class BenchReport:
    scores: dict[str, float]
    categories: dict[str, float]
    accuracy: float
    unanswered: list[str]

    def to_json(self) -> dict:
        return {"schema": "factfin.bench/1", "accuracy": self.accuracy, "categories": self.categories,
                "scores": self.scores, "unanswered": self.unanswered}

    def category_rows(self) -> list[tuple[str, float]]:
        return sorted(self.categories.items())


def bench_accuracy(items: Sequence[QaItem], answers: Iterable[AnswerRecord]) -> BenchReport:
    if not items:
        raise ScoringError("no benchmark items")
    by_id = {it.id: it for it in items}
    if len(by_id) != len(items):
        raise ScoringError("duplicate item ids")
    given: dict[str, AnswerRecord] = {}
    for a in answers:
        if a.item not in by_id:
            raise ScoringError(f"answer for unknown item {a.item!r}")
        if a.item in given:
            raise ScoringError(f"two answers for item {a.item!r}")
        given[a.item] = a
    scores, weighted = {}, defaultdict(list)
    for it in sorted(items, key=lambda i: i.id):
        pts = score_answer(it, given[it.id]) if it.id in given else 0.0
        scores[it.id] = pts
        weighted[it.category].append(pts * it.weight)
    total = math.fsum(v for vals in weighted.values() for v in vals)
    cats = {c: math.fsum(v) / len(v) for c, v in sorted(weighted.items())}
    unanswered = sorted(set(by_id) - set(given))
    return BenchReport(scores, cats, total / len(items), unanswered)


# -- files -----------------------------------------------------------------------------

def load_items(path: str | Path) -> list[QaItem]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(data, list):
        raise SchemaError("items file must hold a JSON array", "$")
    return [QaItem.from_json(obj) for obj in data]


def load_answers(path: str | Path) -> list[AnswerRecord]:
    out = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc.msg}", i, exc.colno) from None
        if not isinstance(obj, dict) or set(obj) - {"item", "answer", "model"} or "item" not in obj:
            raise SchemaError(f"{path} line {i}: answer records hold item, answer and optional model", "item")
        out.append(AnswerRecord(obj["item"], obj.get("answer")))
    return out


def bundled(name: str) -> Path:
    from importlib import resources
    return Path(str(resources.files("factfin") / "data" / name))
