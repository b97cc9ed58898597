"""Statistical and trading evaluation of forecasts.

Forecasts are aligned with bracket indices: ``forecasts[t]`` is the forecast
of ``y[t+1]`` made at ``t``. Trading takes a position ``sign(alpha_t)`` at
each of the 17 origins from the 7th to the 23rd bracket of a session and
books the return to the next bracket, with prices taken as bracket VWMs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import config as _cfg
from .common import UndefinedStatisticError, ValidationError
from .market_data import BracketSeries

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "model_code",
    "mse",
    "mae",
    "sr",
    "mean_pl",
    "std_pl",
    "min_pl",
    "max_pl",
    "first_t",
    "last_t",
    "n_forecasts",
    "n_days",
)
CUM_PL_COLUMNS = ("date", "model_code", "cum_pl")
BASELINE_CODE = "BASELINE"

__all__ = [
    "PerfReport",
    "mse_mae",
    "session_pl",
    "signal_session_pl",
    "session_origins",
    "day_pl",
    "sharpe",
    "evaluate_forecasts",
    "baseline_report",
    "signal_report",
    "reports_frame",
    "cum_pl_frame",
    "rank_models",
    "error_summary",
]


def mse_mae(forecasts: Sequence[float], actuals: Sequence[float]) -> tuple[float, float]:
    f = np.asarray(forecasts, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if f.shape != a.shape:
        raise ValidationError("forecasts and actuals are not aligned")
    if f.size == 0:
        raise ValidationError("empty index set")
    if np.isnan(f).any() or np.isnan(a).any():
        raise ValidationError("missing forecasts or actuals in the index set")
    err = a - f
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))


def signal_session_pl(signal: Sequence[float], prices: Sequence[float], t_s: int) -> float:
    """Session PL of trading ``sign(signal[t])`` for ``t = t_s+1 .. t_s+17``; NaN signals do not trade."""
    p = np.asarray(prices, dtype=float)
    s = np.asarray(signal, dtype=float)
    last = t_s + _cfg.TRADES_PER_SESSION + 1
    if t_s < -1 or last >= p.size or last >= s.size + 1:
        raise ValidationError(
            f"session starting after index {t_s} has fewer than {_cfg.ELIGIBLE_PER_SESSION} observations"
        )
    idx = np.arange(t_s + 1, last)
    returns = (p[idx + 1] - p[idx]) / p[idx]
    position = np.sign(np.nan_to_num(s[idx], nan=0.0))
    return float(np.sum(position * returns))


def session_pl(forecasts: Sequence[float], prices: Sequence[float], t_s: int, baseline: bool = False) -> float:
    """Session PL with ``alpha_t = forecast_t - P_t``; ``baseline`` gives the buy-and-hold return instead."""
    p = np.asarray(prices, dtype=float)
    last = t_s + _cfg.ELIGIBLE_PER_SESSION
    if t_s < -1 or last >= p.size:
        raise ValidationError(
            f"session starting after index {t_s} has fewer than {_cfg.ELIGIBLE_PER_SESSION} observations"
        )
    if baseline:
        return float((p[last] - p[t_s + 1]) / p[t_s + 1])
    alpha = np.asarray(forecasts, dtype=float) - p[: len(forecasts)]
    return signal_session_pl(alpha, p, t_s)


def session_origins(series: BracketSeries) -> list[tuple[date, str, int]]:
    """``(date, session, t_s)`` for every session, ``t_s`` being the last exempt bracket."""
    out = []
    for i, b in enumerate(series.brackets):
        if b.position == _cfg.EXEMPT_BRACKETS:
            out.append((b.date, b.session, i))
    return out


def _trade_indices(t_s: int) -> range:
    return range(t_s + 1, t_s + _cfg.TRADES_PER_SESSION + 1)


def day_pl(signal: np.ndarray, series: BracketSeries, covered: set[int], baseline: bool = False) -> pd.Series:
    """Morning plus afternoon PL per day, for days whose trading origins all lie in *covered*.

    *signal* is indexed by bracket.
    """
    prices = series.y
    per_day: dict[date, list[float]] = {}
    complete: dict[date, bool] = {}
    for day, _, t_s in session_origins(series):
        ok = all(t in covered for t in _trade_indices(t_s)) and t_s + _cfg.ELIGIBLE_PER_SESSION < prices.size
        complete[day] = complete.get(day, True) and ok
        if not ok:
            continue
        if baseline:
            pl = session_pl(signal, prices, t_s, baseline=True)
        else:
            pl = signal_session_pl(signal, prices, t_s)
        per_day.setdefault(day, []).append(pl)
    days = [d for d, ok in complete.items() if ok and len(per_day.get(d, [])) == len(_cfg.SESSIONS)]
    return pd.Series([sum(per_day[d]) for d in days], index=pd.Index(days, name="date"), dtype=float, name="pl")


def sharpe(day_pls: Sequence[float]) -> float:
    """Annualised Sharpe ratio with the sample standard deviation."""
    x = np.asarray(day_pls, dtype=float)
    if x.size < 2:
        raise ValidationError("Sharpe ratio needs at least two days")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0 or not np.isfinite(sd):
        raise UndefinedStatisticError("Sharpe ratio undefined: day PL has zero variance")
    return math.sqrt(_cfg.ANNUALIZATION) * float(np.mean(x)) / sd


@dataclass(slots=True)
class PerfReport:
    model_code: str
    mse: float
    mae: float
    sr: float
    day_pl: pd.Series = field(repr=False)
    n_forecasts: int = 0
    n_days: int = 0
    first_t: int | None = None
    last_t: int | None = None

    @property
    def cum_pl(self) -> pd.Series:
        return self.day_pl.cumsum()

    def to_row(self) -> dict[str, object]:
        pl = self.day_pl
        return {
            "model_code": self.model_code,
            "mse": self.mse,
            "mae": self.mae,
            "sr": self.sr,
            "mean_pl": float(pl.mean()) if len(pl) else np.nan,
            "std_pl": float(pl.std(ddof=1)) if len(pl) > 1 else np.nan,
            "min_pl": float(pl.min()) if len(pl) else np.nan,
            "max_pl": float(pl.max()) if len(pl) else np.nan,
            "first_t": self.first_t,
            "last_t": self.last_t,
            "n_forecasts": self.n_forecasts,
            "n_days": self.n_days,
        }


def _safe_sharpe(code: str, pl: pd.Series) -> float:
    try:
        return sharpe(pl.to_numpy())
    except (UndefinedStatisticError, ValidationError) as exc:
        logger.info("%s: %s", code, exc)
        return np.nan


def evaluate_forecasts(
    code: str,
    times: Sequence[int],
    forecasts: Sequence[float],
    series: BracketSeries,
    index_subset: Iterable[int] | None = None,
) -> PerfReport:
    """MSE/MAE over the forecast index set and day PL for one forecast stream."""
    t_arr = np.asarray(times, dtype=int)
    f_arr = np.asarray(forecasts, dtype=float)
    y = series.y
    keep = t_arr + 1 < y.size
    if index_subset is not None:
        keep &= np.isin(t_arr, np.fromiter(index_subset, dtype=int))
    present = keep & ~np.isnan(f_arr)
    if int(keep.sum()) != int(present.sum()):
        logger.warning("%s: %d origins without a forecast left out of MSE/MAE", code, int(keep.sum() - present.sum()))
    if present.any():
        mse, mae = mse_mae(f_arr[present], y[t_arr[present] + 1])
    else:
        mse, mae = np.nan, np.nan

    signal = np.full(y.size, np.nan)
    signal[t_arr] = f_arr - y[t_arr]
    pl = day_pl(signal, series, set(t_arr.tolist()))
    return PerfReport(
        model_code=code,
        mse=mse,
        mae=mae,
        sr=_safe_sharpe(code, pl),
        day_pl=pl,
        n_forecasts=int(present.sum()),
        n_days=len(pl),
        first_t=int(t_arr[present][0]) if present.any() else None,
        last_t=int(t_arr[present][-1]) if present.any() else None,
    )


def baseline_report(series: BracketSeries, times: Sequence[int]) -> PerfReport:
    """Buy-and-hold PL per session; MSE/MAE are those of the random-walk forecast ``y_t``."""
    t_arr = np.asarray(times, dtype=int)
    y = series.y
    t_arr = t_arr[t_arr + 1 < y.size]
    mse, mae = mse_mae(y[t_arr], y[t_arr + 1]) if t_arr.size else (np.nan, np.nan)
    pl = day_pl(np.zeros(y.size), series, set(t_arr.tolist()), baseline=True)
    return PerfReport(
        model_code=BASELINE_CODE,
        mse=mse,
        mae=mae,
        sr=_safe_sharpe(BASELINE_CODE, pl),
        day_pl=pl,
        n_forecasts=int(t_arr.size),
        n_days=len(pl),
        first_t=int(t_arr[0]) if t_arr.size else None,
        last_t=int(t_arr[-1]) if t_arr.size else None,
    )


def signal_report(series: BracketSeries, times: Sequence[int], signal: str = "oib_mean") -> PerfReport:
    """Trade on the sign of a bracket feature mean instead of a price forecast."""
    if signal not in ("oib_mean", "ofi_mean"):
        raise ValidationError(f"unknown trading signal {signal!r}")
    if series.features is None:
        raise ValidationError("series has no features attached")
    t_arr = np.asarray(times, dtype=int)
    alpha = series.features[:, _cfg.FEATURE_NAMES.index(signal)]
    pl = day_pl(alpha, series, set(t_arr.tolist()))
    code = f"SIGNAL_{signal.upper()}"
    return PerfReport(
        model_code=code,
        mse=np.nan,
        mae=np.nan,
        sr=_safe_sharpe(code, pl),
        day_pl=pl,
        n_forecasts=int(t_arr.size),
        n_days=len(pl),
        first_t=int(t_arr[0]) if t_arr.size else None,
        last_t=int(t_arr[-1]) if t_arr.size else None,
    )


def reports_frame(reports: Iterable[PerfReport]) -> pd.DataFrame:
    frame = pd.DataFrame([r.to_row() for r in reports], columns=list(REPORT_COLUMNS))
    for col in ("first_t", "last_t"):
        frame[col] = frame[col].astype("Int64")
    return frame


def cum_pl_frame(reports: Iterable[PerfReport]) -> pd.DataFrame:
    parts = []
    for r in reports:
        cum = r.cum_pl
        parts.append(
            pd.DataFrame(
                {"date": [d.isoformat() for d in cum.index], "model_code": r.model_code, "cum_pl": cum.to_numpy()}
            )
        )
    if not parts:
        return pd.DataFrame(columns=list(CUM_PL_COLUMNS))
    return pd.concat(parts, ignore_index=True)


def rank_models(reports: Sequence[PerfReport], by: str = "mse", k: int | None = None) -> list[PerfReport]:
    """Best first: ascending MSE or descending SR; missing values sort last."""
    if by not in ("mse", "sr"):
        raise ValidationError(f"cannot rank by {by!r}")

    def key(r: PerfReport) -> tuple[bool, float]:
        value = r.mse if by == "mse" else -r.sr
        return (bool(np.isnan(value)), 0.0 if np.isnan(value) else value)

    ranked = sorted(reports, key=key)
    return ranked if k is None else ranked[:k]


def error_summary(
    codes: Sequence[str], errors: np.ndarray, times: Sequence[int], index_subset: Iterable[int]
) -> pd.DataFrame:
    """Mean, min and max of ``|e|`` and ``e^2`` per model over the origins in *index_subset*."""
    t_arr = np.asarray(times, dtype=int)
    cols = np.isin(t_arr, np.fromiter(index_subset, dtype=int))
    sub = np.asarray(errors, dtype=float)[:, cols]
    rows = []
    for code, e in zip(codes, sub):
        e = e[~np.isnan(e)]
        if e.size == 0:
            rows.append({"model_code": code, "n": 0})
            continue
        a, s = np.abs(e), e**2
        rows.append(
            {
                "model_code": code,
                "n": int(e.size),
                "abs_mean": float(a.mean()),
                "abs_min": float(a.min()),
                "abs_max": float(a.max()),
                "sq_mean": float(s.mean()),
                "sq_min": float(s.min()),
                "sq_max": float(s.max()),
            }
        )
    columns = ["model_code", "n", "abs_mean", "abs_min", "abs_max", "sq_mean", "sq_min", "sq_max"]
    return pd.DataFrame(rows, columns=columns)
