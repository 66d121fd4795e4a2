"""Top-k snippet retrieval over a small corpus (the RAG step).

The default embedder is a signed feature-hashing bag of words: tokens are
hashed with blake2b into ``dim`` buckets and the vector is L2-normalized, so
the dot product is a cosine similarity and identical on every platform.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from factfin.market_data.news import tokenize
from factfin.market_data.state import MarketState

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 5


@dataclass(frozen=True)
class Snippet:
    id: str
    text: str
    kind: str = "news"  # news | factor | sector


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashingEmbedder:
    def __init__(self, dim: int = 512):
        self.dim = dim

    def _bucket(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                j, sign = self._bucket(tok)
                out[row, j] += sign
            norm = math.sqrt(float(out[row] @ out[row]))
            if norm > 0:
                out[row] /= norm
        return out


class EmbedderUnavailable(RuntimeError):
    pass


@dataclass
class SnippetIndex:
    snippets: tuple[Snippet, ...]
    embedder: Embedder = field(default_factory=HashingEmbedder)
    vectors: np.ndarray | None = None

    def __post_init__(self):
        self.snippets = tuple(self.snippets)
        if self.vectors is None:
            try:
                self.vectors = self.embedder.embed([s.text for s in self.snippets]) if self.snippets else np.zeros((0, 1))
            except (EmbedderUnavailable, OSError) as exc:
                log.warning("embedder unavailable (%s); using deterministic hashing embedder", exc)
                self.embedder = HashingEmbedder()
                self.vectors = self.embedder.embed([s.text for s in self.snippets])

    def __len__(self) -> int:
        return len(self.snippets)


@dataclass(frozen=True, eq=False)
class StructuredState:
    state: MarketState
    context: tuple[tuple[Snippet, float], ...]


def state_query(state: MarketState) -> str:
    """Describe the state in words the corpus is likely to use."""
    words = [state.asset]
    rsi = state.factors.get("rsi(14)", math.nan)
    if not math.isnan(rsi):
        words.append("oversold" if rsi < 30 else "overbought" if rsi > 70 else "neutral")
    hist = state.factors.get("macd_hist(12,26,9)", math.nan)
    if not math.isnan(hist):
        words.append("bullish momentum" if hist > 0 else "bearish momentum")
    trend = state.factors.get("sma(50)", math.nan)
    if not math.isnan(trend):
        words.append("uptrend" if state.close > trend else "downtrend")
    words.extend(sorted(state.news.events))
    words.append(state.news.dominant_topic)
    return " ".join(words)


def rank(query_vec: np.ndarray, vectors: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Stable top-k by descending score; ties keep corpus order."""
    scores = vectors @ query_vec
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order[:k]]


def retrieve_context(state: MarketState, index: SnippetIndex, k: int = DEFAULT_TOP_K,
                     query: str | None = None) -> StructuredState:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return StructuredState(state, ())
    query = state_query(state) if query is None else query
    try:
        qv = index.embedder.embed([query])[0]
    except (EmbedderUnavailable, OSError) as exc:
        log.warning("embedder unavailable (%s); falling back to hashing embedder", exc)
        index = SnippetIndex(index.snippets, HashingEmbedder())
        qv = index.embedder.embed([query])[0]
    hits = rank(qv, index.vectors, k)
    return StructuredState(state, tuple((index.snippets[i], s) for i, s in hits))
