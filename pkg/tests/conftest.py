from __future__ import annotations

import datetime as dt

import numpy as np
import pytest

from factfin.market_data.dataset import Dataset
from factfin.market_data.prices import PriceSeries
from factfin.synthetic import mean_reverting, random_walk


def flat(closes, start=dt.date(2022, 1, 3)) -> PriceSeries:
    return PriceSeries.from_closes("TST", closes, start)


def gapless(closes, start=dt.date(2022, 1, 3)) -> PriceSeries:
    """Bars whose open is the previous close, so a next-open fill trades at the signal bar's close."""
    c = np.asarray(closes, dtype=float)
    o = np.concatenate([[c[0]], c[:-1]])
    s = PriceSeries.from_closes("TST", c, start)
    return PriceSeries("TST", s.dates, o, np.maximum(o, c), np.minimum(o, c), c)


@pytest.fixture
def walk_ds() -> Dataset:
    return Dataset(random_walk(300, 11))


@pytest.fixture
def mr_ds() -> Dataset:
    return Dataset(mean_reverting(400, 3))
