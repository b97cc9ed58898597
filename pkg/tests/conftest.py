import logging
from datetime import date, datetime, timedelta

import numpy as np
import pytest

from adaptcast import config as _cfg
from adaptcast.market_data import Bracket, BracketSeries, TickRecord
from adaptcast.model_zoo import ForecastTable, ModelSpec

# Suppress INFO & DEBUG logs from the pipeline during tests
logging.basicConfig(level=logging.WARNING)


def make_tick(ts: datetime, last=100.0, vol=1, bp=99.9, bq=10, ap=100.1, aq=10) -> TickRecord:
    """Build a TickRecord with sensible defaults."""
    return TickRecord(
        timestamp=ts, last_price=last, volume=vol, bid_price=bp, bid_qty=bq, ask_price=ap, ask_qty=aq
    )


def make_series(y, days: int | None = None, features=None) -> BracketSeries:
    """Wrap a price path in whole sessions of 24 brackets starting 2024-01-02."""
    y = np.asarray(y, dtype=float)
    per_day = _cfg.BRACKETS_PER_SESSION * len(_cfg.SESSIONS)
    if days is None:
        days = -(-y.size // per_day)
    brackets = []
    day = date(2024, 1, 2)
    i = 0
    for _ in range(days):
        for s, (name, start, _end) in enumerate(_cfg.SESSIONS):
            for pos in range(1, _cfg.BRACKETS_PER_SESSION + 1):
                if i >= y.size:
                    break
                end = datetime.combine(day, start) + timedelta(seconds=pos * _cfg.BRACKET_SECONDS)
                gap = "none" if pos > 1 else ("day_gap" if s == 0 else "lunch_gap")
                brackets.append(
                    Bracket(
                        date=day, label=end.strftime("%H%M"), y=float(y[i]), tick_count=1,
                        session=name, position=pos, gap_kind=gap,
                    )
                )
                i += 1
        day += timedelta(days=1)
    if features is None:
        features = np.zeros((len(brackets), len(_cfg.FEATURE_NAMES)))
    return BracketSeries(brackets=brackets, features=np.asarray(features, dtype=float)[: len(brackets)])


def make_table(abs_errors: np.ndarray, y_now: float = 100.0, specs=None, forecasts=None) -> ForecastTable:
    """Toy forecast table whose errors have the given magnitudes (realized price fixed at y_now)."""
    abs_errors = np.asarray(abs_errors, dtype=float)
    n_models, n_times = abs_errors.shape
    if specs is None:
        specs = toy_specs(n_models)
    realized = np.full(n_times, y_now)
    if forecasts is None:
        forecasts = realized[None, :] - abs_errors
    return ForecastTable(
        specs=list(specs),
        times=np.arange(n_times),
        forecasts=np.asarray(forecasts, dtype=float),
        status=np.full((n_models, n_times), "ok", dtype=object),
        origin=np.full(n_times, y_now),
        realized=realized,
    )


def toy_specs(n: int) -> list[ModelSpec]:
    """The first *n* grid models of group 0 and 1, in grid order."""
    specs = [
        ModelSpec(g, w, p, d, q)
        for g in (0, 1)
        for w in _cfg.UNIVARIATE_WINDOWS
        for p in (0, 1)
        for d in (1, 2)
        for q in (0, 1)
    ]
    return sorted(specs)[:n]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240102)


@pytest.fixture
def tick_factory():
    """Factory for TickRecords with overridable fields."""
    return make_tick


@pytest.fixture
def series_factory():
    """Factory that turns a price path into a BracketSeries."""
    return make_series


@pytest.fixture
def table_factory():
    """Factory for toy ForecastTables built from absolute error matrices."""
    return make_table
