"""News items and the default lexicon-based news factorizer."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from factfin.errors import ParseError

TOPICS = ("earnings", "macro", "product", "regulation", "market", "other")
EVENT_FLAGS = ("earnings", "regulatory", "macro")
_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class NewsItem:
    timestamp: dt.date
    asset: str
    headline: str
    body: str = ""
    source: str = ""
    id: str = ""

    def __post_init__(self):
        if not self.id:
            digest = hashlib.sha1(f"{self.timestamp}|{self.asset}|{self.headline}".encode()).hexdigest()
            object.__setattr__(self, "id", digest[:12])

    @property
    def text(self) -> str:
        return f"{self.headline} {self.body}".strip()

    def to_json(self) -> dict:
        return {"timestamp": self.timestamp.isoformat(), "asset": self.asset, "headline": self.headline,
                "body": self.body, "source": self.source}


@dataclass(frozen=True)
class NewsFactors:
    sentiment: float = 0.0
    topics: tuple[float, ...] = tuple(1.0 if t == "other" else 0.0 for t in TOPICS)
    events: frozenset[str] = field(default_factory=frozenset)

    def topic(self, name: str) -> float:
        return self.topics[TOPICS.index(name)]

    def features(self) -> dict[str, float]:
        out = {"sentiment": self.sentiment}
        out.update({f"topic_{t}": p for t, p in zip(TOPICS, self.topics)})
        out.update({f"event_{e}": float(e in self.events) for e in EVENT_FLAGS})
        return out

    @property
    def dominant_topic(self) -> str:
        return TOPICS[max(range(len(TOPICS)), key=lambda i: (self.topics[i], -i))]


EMPTY_NEWS = NewsFactors()


@dataclass(frozen=True)
class Lexicon:
    version: str
    sentiment: dict
    topics: dict
    events: dict

    @classmethod
    def from_json(cls, data: dict) -> "Lexicon":
        return cls(data["version"], dict(data["sentiment"]),
                   {k: frozenset(v) for k, v in data["topics"].items()},
                   {k: frozenset(v) for k, v in data["events"].items()})


@lru_cache(maxsize=None)
def default_lexicon() -> Lexicon:
    raw = resources.files("factfin.market_data").joinpath("lexicon_v1.json").read_text(encoding="utf-8")
    return Lexicon.from_json(json.loads(raw))


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def factorize_news(items: Iterable[NewsItem], t: dt.date | None = None,
                   lexicon: Lexicon | None = None) -> NewsFactors:
    """Turn the news visible at ``t`` into sentiment, topic mix and event flags.

    Sentiment is the mean lexicon score over matched tokens, clipped to
    [-1, 1]. Topic mass is the normalized keyword hit count per bucket; with
    no hits everything goes to ``other``. Items dated after ``t`` are ignored.
    """
    lex = lexicon or default_lexicon()
    scores: list[float] = []
    hits = dict.fromkeys(TOPICS, 0)
    events: set[str] = set()
    for item in items:
        if t is not None and item.timestamp > t:
            continue
        for tok in tokenize(item.text):
            if tok in lex.sentiment:
                scores.append(lex.sentiment[tok])
            for topic, words in lex.topics.items():
                if tok in words:
                    hits[topic] += 1
            for flag, words in lex.events.items():
                if tok in words:
                    events.add(flag)
    sentiment = sum(scores) / len(scores) if scores else 0.0
    sentiment = max(-1.0, min(1.0, sentiment))
    total = sum(hits.values())
    if total == 0:
        topics = EMPTY_NEWS.topics
    else:
        topics = tuple(hits[k] / total for k in TOPICS)
    return NewsFactors(sentiment, topics, frozenset(events))


def load_news(path: str | Path) -> list[NewsItem]:
    items = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                items.append(NewsItem(dt.date.fromisoformat(obj["timestamp"][:10]), obj["asset"],
                                      obj["headline"], obj.get("body") or "", obj.get("source") or ""))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad news record: {exc}", line=lineno, column=1) from None
    items.sort(key=lambda n: (n.timestamp, n.id))
    return items


def write_news(items: Sequence[NewsItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_json(), sort_keys=True) + "\n")
