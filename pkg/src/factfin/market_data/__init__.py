from factfin.market_data.dataset import Dataset
from factfin.market_data.factors import (
    DEFAULT_FACTORS, FACTOR_CATALOG, FactorSet, FactorSpec, compute_factors,
)
from factfin.market_data.news import NewsFactors, NewsItem, factorize_news, load_news
from factfin.market_data.prices import PriceBar, PriceSeries, load_ohlcv, write_ohlcv
from factfin.market_data.retrieval import (
    HashingEmbedder, Snippet, SnippetIndex, StructuredState, retrieve_context,
)
from factfin.market_data.state import MarketState, build_state

__all__ = [
    "Dataset", "DEFAULT_FACTORS", "FACTOR_CATALOG", "FactorSet", "FactorSpec", "compute_factors",
    "NewsFactors", "NewsItem", "factorize_news", "load_news", "PriceBar", "PriceSeries",
    "load_ohlcv", "write_ohlcv", "HashingEmbedder", "Snippet", "SnippetIndex", "StructuredState",
    "retrieve_context", "MarketState", "build_state",
]
