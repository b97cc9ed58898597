"""Order imbalance (OIB) and order flow imbalance (OFI) features per bracket.

Each bracket gets the mean of its tick-level values and a p-score
``Phi(mean / sd)``, giving the 4-vector ``(oib_mean, ofi_mean, oib_p, ofi_p)``.
OFI needs the previous tick of the same session, so the first tick of every
session contributes no OFI value.
"""

from __future__ import annotations

import logging
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import ndtr

from . import config as _cfg
from .common import DegenerateInputError, ValidationError
from .market_data import BracketSeries, TickRecord, bracket_index

logger = logging.getLogger(__name__)

FEATURE_COLUMNS = ("date", "label") + _cfg.FEATURE_NAMES

__all__ = [
    "FeatureVector",
    "oib",
    "ofi",
    "pscore",
    "bracket_features",
    "tick_features",
    "compute_features",
    "features_frame",
    "describe_brackets",
]


@dataclass(frozen=True, slots=True)
class FeatureVector:
    oib_mean: float
    ofi_mean: float
    oib_p: float
    ofi_p: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def oib(tick: TickRecord) -> float:
    depth = tick.bid_qty + tick.ask_qty
    if depth <= 0:
        raise DegenerateInputError(f"order imbalance undefined at {tick.timestamp}: no quoted quantity")
    return (tick.bid_qty - tick.ask_qty) / depth


def ofi(prev: TickRecord, curr: TickRecord) -> float:
    """Signed best-quote flow between two consecutive ticks of one session.

    Both inequalities on a side are inclusive, so an unchanged price fires the
    two terms of that side.
    """
    flow = 0.0
    if curr.bid_price >= prev.bid_price:
        flow += curr.bid_qty
    if curr.bid_price <= prev.bid_price:
        flow -= prev.bid_qty
    if curr.ask_price <= prev.ask_price:
        flow += prev.ask_qty
    if curr.ask_price >= prev.ask_price:
        flow -= curr.ask_qty
    return flow


def pscore(mean: float, sd: float) -> float:
    """Standard normal CDF of ``mean / sd``; a zero (or undefined) sd takes the one-sided limit."""
    if not np.isfinite(sd) or sd == 0.0:
        return 0.5 if mean == 0 else (1.0 if mean > 0 else 0.0)
    return float(ndtr(mean / sd))


def _summary(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValidationError("bracket has no feature values")
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, pscore(mean, sd)


def bracket_features(oib_values: Sequence[float], ofi_values: Sequence[float]) -> FeatureVector:
    """Mean and p-score of each feature over one bracket's tick values."""
    oib_mean, oib_p = _summary(oib_values)
    ofi_mean, ofi_p = _summary(ofi_values)
    return FeatureVector(oib_mean=oib_mean, ofi_mean=ofi_mean, oib_p=oib_p, ofi_p=ofi_p)


# ---------------------------------------------------------------------------
# Vectorised path used by the pipeline
# ---------------------------------------------------------------------------


def tick_features(ticks: Sequence[TickRecord]) -> pd.DataFrame:
    """Per-tick OIB/OFI with the bracket each tick belongs to.

    Ticks without quoted quantity get a missing OIB; the first tick of each
    session gets a missing OFI.
    """
    ordinals, sessions, positions = bracket_index(ticks)
    bp = np.array([t.bid_price for t in ticks], dtype=float)
    ap = np.array([t.ask_price for t in ticks], dtype=float)
    bq = np.array([t.bid_qty for t in ticks], dtype=float)
    aq = np.array([t.ask_qty for t in ticks], dtype=float)

    depth = bq + aq
    with np.errstate(invalid="ignore", divide="ignore"):
        oib_v = np.where(depth > 0, (bq - aq) / np.where(depth > 0, depth, 1.0), np.nan)

    ofi_v = np.full(len(ticks), np.nan)
    if len(ticks) > 1:
        up_b = bp[1:] >= bp[:-1]
        dn_b = bp[1:] <= bp[:-1]
        dn_a = ap[1:] <= ap[:-1]
        up_a = ap[1:] >= ap[:-1]
        flow = bq[1:] * up_b - bq[:-1] * dn_b + aq[:-1] * dn_a - aq[1:] * up_a
        same = (ordinals[1:] == ordinals[:-1]) & (sessions[1:] == sessions[:-1])
        ofi_v[1:] = np.where(same, flow, np.nan)

    skipped = int(np.isnan(oib_v).sum())
    if skipped:
        logger.warning("Skipped %d ticks with no quoted quantity for order imbalance", skipped)
    return pd.DataFrame({"day": ordinals, "session": sessions, "pos": positions, "oib": oib_v, "ofi": ofi_v})


def compute_features(ticks: Sequence[TickRecord], series: BracketSeries) -> BracketSeries:
    """Attach the ``(n, 4)`` feature matrix to *series*; empty brackets carry the previous vector."""
    per_tick = tick_features(ticks)
    stats = per_tick.groupby(["day", "session", "pos"], sort=True)[["oib", "ofi"]].agg(["mean", "std", "count"])

    keys = pd.MultiIndex.from_tuples(
        [
            (b.date.toordinal(), [s[0] for s in _cfg.SESSIONS].index(b.session), b.position)
            for b in series.brackets
        ],
        names=["day", "session", "pos"],
    )
    stats = stats.reindex(keys)

    columns = []
    for name in ("oib", "ofi"):
        mean = stats[(name, "mean")].to_numpy(dtype=float)
        sd = stats[(name, "std")].to_numpy(dtype=float)
        count = stats[(name, "count")].fillna(0).to_numpy()
        mean = np.where(count > 0, mean, np.nan)
        sd = np.where(count > 1, sd, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(sd > 0, ndtr(mean / np.where(sd > 0, sd, 1.0)), np.sign(mean) * 0.5 + 0.5)
        p = np.where(np.isnan(mean), np.nan, p)
        columns.append((mean, p))

    matrix = np.column_stack([columns[0][0], columns[1][0], columns[0][1], columns[1][1]])
    frame = pd.DataFrame(matrix, columns=_cfg.FEATURE_NAMES)
    holes = int(frame.isna().any(axis=1).sum())
    if holes:
        logger.info("Carried features into %d brackets without tick values", holes)
    frame = frame.ffill().bfill()
    if frame.isna().to_numpy().any():
        raise ValidationError("no bracket has feature values")
    return series.with_features(frame.to_numpy())


def features_frame(series: BracketSeries) -> pd.DataFrame:
    if series.features is None:
        raise ValidationError("series has no features attached")
    frame = series.to_frame()[["date", "label"]].copy()
    for i, name in enumerate(_cfg.FEATURE_NAMES):
        frame[name] = series.features[:, i]
    return frame


def describe_brackets(series: BracketSeries) -> pd.DataFrame:
    """Count, mean, std, min, quartiles and max of the features, the VWM and ticks per bracket."""
    frame = features_frame(series).drop(columns=["date", "label"])
    frame["vwm"] = series.y
    frame["ticks"] = [b.tick_count for b in series.brackets]
    return frame.describe()
