"""Tick ingestion, 5-minute bracketing and synthetic tick streams.

A session runs from its opening time to its closing time inclusive. A tick
``s`` seconds after the open falls into bracket ``ceil(s / 300)`` (a tick
stamped exactly at the open joins bracket 1), so bracket ``k`` covers the
half-open interval ``(open + 300(k-1), open + 300k]`` and carries the label
of its end time, e.g. ``0935``.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import pandas as pd

from . import config as _cfg
from .common import DegenerateInputError, ParseError, ValidationError, write_csv

logger = logging.getLogger(__name__)

GapKind = Literal["none", "day_gap", "lunch_gap"]

BRACKET_COLUMNS = ("date", "label", "y", "tick_count", "gap", "eligible")

__all__ = [
    "TickRecord",
    "TickBatch",
    "Bracket",
    "BracketSeries",
    "SynthParams",
    "parse_ticks",
    "bracketize",
    "gap_stats",
    "synth_ticks",
    "ticks_to_frame",
    "write_ticks",
]


@dataclass(frozen=True, slots=True)
class TickRecord:
    """One best-quote snapshot with the trade that accompanied it."""

    timestamp: datetime
    last_price: float
    volume: int
    bid_price: float
    bid_qty: int
    ask_price: float
    ask_qty: int


@dataclass(frozen=True, slots=True)
class TickBatch:
    """Parsed ticks in time order plus the number of out-of-session rows dropped."""

    ticks: list[TickRecord]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.ticks)


@dataclass(frozen=True, slots=True)
class Bracket:
    date: date
    label: str
    y: float
    tick_count: int
    session: str
    position: int  # 1..24 within the session
    gap_kind: GapKind = "none"
    carried: bool = False  # y carried forward from a neighbour (no traded volume)

    @property
    def is_session_start(self) -> bool:
        return self.position == 1

    @property
    def forecast_eligible(self) -> bool:
        return self.position > _cfg.EXEMPT_BRACKETS


@dataclass(slots=True)
class BracketSeries:
    """Ordered brackets with an optional aligned ``(n, 4)`` feature matrix."""

    brackets: list[Bracket]
    features: np.ndarray | None = None
    _y: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.brackets)

    @property
    def y(self) -> np.ndarray:
        if self._y is None:
            self._y = np.array([b.y for b in self.brackets], dtype=float)
        return self._y

    @property
    def eligible(self) -> np.ndarray:
        return np.array([b.forecast_eligible for b in self.brackets], dtype=bool)

    @property
    def session_start(self) -> np.ndarray:
        return np.array([b.is_session_start for b in self.brackets], dtype=bool)

    @property
    def positions(self) -> np.ndarray:
        return np.array([b.position for b in self.brackets], dtype=int)

    @property
    def dates(self) -> list[date]:
        return [b.date for b in self.brackets]

    def session_count(self) -> int:
        return int(self.session_start.sum())

    def with_features(self, features: np.ndarray) -> "BracketSeries":
        features = np.asarray(features, dtype=float)
        if features.shape != (len(self), len(_cfg.FEATURE_NAMES)):
            raise ValidationError(f"feature matrix shape {features.shape} does not match {len(self)} brackets")
        return BracketSeries(brackets=list(self.brackets), features=features)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "date": [b.date.isoformat() for b in self.brackets],
                "label": [b.label for b in self.brackets],
                "y": self.y,
                "tick_count": [b.tick_count for b in self.brackets],
                "gap": [b.gap_kind for b in self.brackets],
                "eligible": [int(b.forecast_eligible) for b in self.brackets],
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, features: np.ndarray | None = None) -> "BracketSeries":
        """Rebuild a series from the bracket CSV; session and position follow from the label."""
        brackets = []
        for row in frame.itertuples(index=False):
            label = str(row.label).zfill(4)
            session, position = _locate_label(label)
            brackets.append(
                Bracket(
                    date=date.fromisoformat(str(row.date)),
                    label=label,
                    y=float(row.y),
                    tick_count=int(row.tick_count),
                    session=session,
                    position=position,
                    gap_kind=str(row.gap),  # type: ignore[arg-type]
                )
            )
        return cls(brackets=brackets, features=features)


def _locate_label(label: str) -> tuple[str, int]:
    minutes = int(label[:2]) * 60 + int(label[2:])
    for name, start, end in _cfg.SESSIONS:
        lo = start.hour * 60 + start.minute
        hi = end.hour * 60 + end.minute
        if lo < minutes <= hi and (minutes - lo) % (_cfg.BRACKET_SECONDS // 60) == 0:
            return name, (minutes - lo) // (_cfg.BRACKET_SECONDS // 60)
    raise ValidationError(f"bracket label {label} is not a session bracket end")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _session_of(ts: pd.Series) -> np.ndarray:
    """Return the session index of every timestamp, or -1 outside trading hours."""
    clock = ts.dt.hour * 3600 + ts.dt.minute * 60 + ts.dt.second
    out = np.full(len(ts), -1, dtype=int)
    for idx, (_, start, end) in enumerate(_cfg.SESSIONS):
        lo = start.hour * 3600 + start.minute * 60
        hi = end.hour * 3600 + end.minute * 60
        out[((clock >= lo) & (clock <= hi)).to_numpy()] = idx
    return out


def _first_bad(mask: np.ndarray) -> int | None:
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def parse_ticks(source: str | Path | Iterable[str], *, cumulative_volume: bool = False) -> TickBatch:
    """Parse tick CSV rows (header ``ts,last,vol,bp,bq,ap,aq``) into a :class:`TickBatch`.

    *source* is a path, the file text itself, or an iterable of lines. With *cumulative_volume*
    the ``vol`` column is a running total and is converted to per-entry volume
    by first differences within each date. Rows outside session hours are
    dropped and counted. Line numbers in errors are 1-based file lines.
    """
    if isinstance(source, Path):
        if not source.exists():
            raise ValidationError(f"tick file not found: {source}")
        text = source.read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = "".join(line if line.endswith("\n") else line + "\n" for line in source)

    try:
        raw = pd.read_csv(io.StringIO(text), dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise ParseError("empty tick file") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed tick file: {exc}") from exc

    if tuple(raw.columns) != _cfg.TICK_COLUMNS:
        raise ParseError(f"expected header {','.join(_cfg.TICK_COLUMNS)}, got {','.join(raw.columns)}", line=1)

    lines = np.arange(len(raw)) + 2
    missing = raw.isna().any(axis=1).to_numpy()
    if (bad := _first_bad(missing)) is not None:
        raise ParseError("missing field", line=int(lines[bad]))

    ts = pd.to_datetime(raw["ts"], format=_cfg.TIMESTAMP_FORMAT, errors="coerce")
    if (bad := _first_bad(ts.isna().to_numpy())) is not None:
        raise ParseError(f"bad timestamp {raw['ts'].iloc[bad]!r}", line=int(lines[bad]))

    numeric = {col: pd.to_numeric(raw[col], errors="coerce").to_numpy(dtype=float) for col in _cfg.TICK_COLUMNS[1:]}
    for col, values in numeric.items():
        if (bad := _first_bad(~np.isfinite(values))) is not None:
            raise ParseError(f"non-numeric {col} {raw[col].iloc[bad]!r}", line=int(lines[bad]))
    for col in ("vol", "bq", "aq"):
        values = numeric[col]
        if (bad := _first_bad(values < 0)) is not None:
            raise ParseError(f"negative {col}", line=int(lines[bad]))
        if (bad := _first_bad(values != np.round(values))) is not None:
            raise ParseError(f"non-integer {col}", line=int(lines[bad]))
    for col in ("last", "bp", "ap"):
        if (bad := _first_bad(numeric[col] <= 0)) is not None:
            raise ParseError(f"non-positive {col}", line=int(lines[bad]))
    quoted = (numeric["bq"] > 0) & (numeric["aq"] > 0)
    if (bad := _first_bad(quoted & (numeric["ap"] < numeric["bp"]))) is not None:
        raise ParseError("ask below bid", line=int(lines[bad]))

    stamps = ts.to_numpy()
    if (bad := _first_bad(np.diff(stamps) < np.timedelta64(0, "s"))) is not None:
        raise ParseError("timestamps go backwards", line=int(lines[bad + 1]))

    volume = numeric["vol"]
    if cumulative_volume:
        days = ts.dt.date.to_numpy()
        diffs = np.diff(volume, prepend=np.nan)
        new_day = np.r_[True, days[1:] != days[:-1]]
        volume = np.where(new_day, volume, diffs)
        if (bad := _first_bad(volume < 0)) is not None:
            raise ParseError("cumulative volume decreases", line=int(lines[bad]))

    keep = _session_of(ts) >= 0
    dropped = int((~keep).sum())
    if dropped:
        logger.info("Dropped %d tick rows outside session hours", dropped)

    ticks = [
        TickRecord(
            timestamp=stamp.to_pydatetime(),
            last_price=float(last),
            volume=int(vol),
            bid_price=float(bp),
            bid_qty=int(bq),
            ask_price=float(ap),
            ask_qty=int(aq),
        )
        for stamp, last, vol, bp, bq, ap, aq in zip(
            ts[keep],
            numeric["last"][keep],
            volume[keep],
            numeric["bp"][keep],
            numeric["bq"][keep],
            numeric["ap"][keep],
            numeric["aq"][keep],
        )
    ]
    return TickBatch(ticks=ticks, dropped=dropped)


def ticks_to_frame(ticks: Sequence[TickRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "ts": [t.timestamp.strftime(_cfg.TIMESTAMP_FORMAT) for t in ticks],
            "last": [t.last_price for t in ticks],
            "vol": [t.volume for t in ticks],
            "bp": [t.bid_price for t in ticks],
            "bq": [t.bid_qty for t in ticks],
            "ap": [t.ask_price for t in ticks],
            "aq": [t.ask_qty for t in ticks],
        }
    )


def write_ticks(ticks: Sequence[TickRecord], path: Path) -> Path:
    return write_csv(ticks_to_frame(ticks), path, columns=_cfg.TICK_COLUMNS)


# ---------------------------------------------------------------------------
# Bracketing
# ---------------------------------------------------------------------------


def bracket_index(ticks: Sequence[TickRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return per-tick ``(date ordinal, session index, bracket position)`` arrays."""
    n = len(ticks)
    ordinals = np.empty(n, dtype=int)
    sessions = np.empty(n, dtype=int)
    positions = np.empty(n, dtype=int)
    opens = [
        (start.hour * 3600 + start.minute * 60, end.hour * 3600 + end.minute * 60) for _, start, end in _cfg.SESSIONS
    ]
    for i, tick in enumerate(ticks):
        ts = tick.timestamp
        clock = ts.hour * 3600 + ts.minute * 60 + ts.second
        for s, (lo, hi) in enumerate(opens):
            if lo <= clock <= hi:
                sessions[i] = s
                positions[i] = max(1, math.ceil((clock - lo) / _cfg.BRACKET_SECONDS))
                break
        else:
            raise ValidationError(f"tick at {ts} lies outside session hours")
        ordinals[i] = ts.date().toordinal()
    return ordinals, sessions, positions


def _label(session: int, position: int) -> str:
    start = _cfg.SESSIONS[session][1]
    end = datetime.combine(date.min, start) + timedelta(seconds=_cfg.BRACKET_SECONDS * position)
    return end.strftime("%H%M")


def bracketize(ticks: Sequence[TickRecord]) -> BracketSeries:
    """Aggregate sorted ticks into 24 VWM brackets per session.

    A bracket without traded volume carries the previous bracket's price
    forward (the very first bracket backfills from the next priced one).
    Every date present in the input must have ticks in both sessions.
    """
    if not ticks:
        raise ValidationError("no ticks to bracketize")
    ordinals, sessions, positions = bracket_index(ticks)
    price = np.array([t.last_price for t in ticks], dtype=float)
    volume = np.array([t.volume for t in ticks], dtype=float)

    frame = pd.DataFrame(
        {"day": ordinals, "session": sessions, "pos": positions, "pv": price * volume, "vol": volume, "n": 1}
    )
    grouped = frame.groupby(["day", "session", "pos"], sort=True)[["pv", "vol", "n"]].sum()

    days = np.unique(ordinals)
    per_session = frame.groupby(["day", "session"]).size()
    for day in days:
        for s, (name, _, _) in enumerate(_cfg.SESSIONS):
            if (day, s) not in per_session.index:
                raise ValidationError(f"{date.fromordinal(int(day))} {name} session has no ticks")

    full = pd.MultiIndex.from_product(
        [days, range(len(_cfg.SESSIONS)), range(1, _cfg.BRACKETS_PER_SESSION + 1)], names=["day", "session", "pos"]
    )
    grouped = grouped.reindex(full, fill_value=0)
    vol = grouped["vol"].to_numpy()
    with np.errstate(invalid="ignore", divide="ignore"):
        vwm = np.where(vol > 0, grouped["pv"].to_numpy() / np.where(vol > 0, vol, 1.0), np.nan)
    carried = np.isnan(vwm)
    if carried.all():
        raise ValidationError("no traded volume in any bracket")
    vwm = pd.Series(vwm).ffill().bfill().to_numpy()
    if carried.any():
        logger.info("Carried price into %d brackets without traded volume", int(carried.sum()))

    brackets: list[Bracket] = []
    for i, ((day, s, pos), count) in enumerate(zip(grouped.index, grouped["n"].to_numpy())):
        gap: GapKind = "none"
        if pos == 1:
            gap = "day_gap" if s == 0 else "lunch_gap"
        brackets.append(
            Bracket(
                date=date.fromordinal(int(day)),
                label=_label(int(s), int(pos)),
                y=float(vwm[i]),
                tick_count=int(count),  # raw count, carried brackets included
                session=_cfg.SESSIONS[int(s)][0],
                position=int(pos),
                gap_kind=gap,
                carried=bool(carried[i]),
            )
        )
    logger.debug("Bracketized %d ticks into %d brackets", len(ticks), len(brackets))
    return BracketSeries(brackets=brackets)


def gap_stats(series: BracketSeries) -> pd.DataFrame:
    """Summarize consecutive VWM differences split by day gap, lunch gap and the rest."""
    if series.session_count() < 2:
        raise ValidationError("gap statistics need at least two sessions")
    diffs = np.diff(series.y)
    kinds = np.array([b.gap_kind for b in series.brackets[1:]])
    rows = {}
    for name, kind in (("day_gap", "day_gap"), ("lunch_gap", "lunch_gap"), ("rest", "none")):
        values = pd.Series(diffs[kinds == kind])
        rows[name] = {
            "count": int(values.size),
            "mean": float(values.mean()) if values.size else np.nan,
            "std": float(values.std(ddof=1)) if values.size > 1 else (0.0 if values.size == 1 else np.nan),
            "min": float(values.min()) if values.size else np.nan,
            "max": float(values.max()) if values.size else np.nan,
        }
    return pd.DataFrame.from_dict(rows, orient="index")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SynthParams:
    start: date = date(2024, 1, 2)
    price: float = 3000.0
    tick_vol: float = 0.5  # per-tick random-walk step sd
    jump_scale: float = 5.0  # overnight jump sd
    lunch_scale: float = 2.5  # midday jump sd
    spread: float = 0.2
    ticks_per_bracket: int = 10
    mean_volume: float = 5.0
    mean_qty: float = 20.0


def _trading_days(start: date, days: int) -> list[date]:
    out: list[date] = []
    day = start
    while len(out) < days:
        if day.weekday() < 5:
            out.append(day)
        day += timedelta(days=1)
    return out


def synth_ticks(seed: int, days: int, params: SynthParams | None = None) -> list[TickRecord]:
    """Generate a deterministic random-walk tick stream over *days* weekdays."""
    params = params or SynthParams()
    if days < 1:
        raise ValidationError("days must be >= 1")
    if params.spread <= 0:
        raise ValidationError("spread must be positive")
    if params.jump_scale <= 0:
        raise ValidationError("jump_scale must be positive")
    if params.tick_vol <= 0 or params.lunch_scale < 0:
        raise ValidationError("tick_vol must be positive and lunch_scale non-negative")
    per_bracket = params.ticks_per_bracket
    if not 1 <= per_bracket <= _cfg.BRACKET_SECONDS:
        raise ValidationError(f"ticks_per_bracket must be within 1..{_cfg.BRACKET_SECONDS}")

    rng = np.random.default_rng(seed)
    half = params.spread / 2
    price = params.price
    ticks: list[TickRecord] = []
    for d, day in enumerate(_trading_days(params.start, days)):
        for s, (_, start, _end) in enumerate(_cfg.SESSIONS):
            if d > 0 and s == 0:
                price += rng.normal(0.0, params.jump_scale)
            elif s == 1:
                price += rng.normal(0.0, params.lunch_scale)
            open_at = datetime.combine(day, start)
            for pos in range(_cfg.BRACKETS_PER_SESSION):
                offsets = np.sort(rng.choice(_cfg.BRACKET_SECONDS, size=per_bracket, replace=False)) + 1
                steps = rng.normal(0.0, params.tick_vol, size=per_bracket)
                vols = rng.poisson(params.mean_volume, size=per_bracket) + 1
                bqs = rng.poisson(params.mean_qty, size=per_bracket) + 1
                aqs = rng.poisson(params.mean_qty, size=per_bracket) + 1
                for k in range(per_bracket):
                    price += steps[k]
                    if price <= params.spread:
                        raise DegenerateInputError("synthetic price walked to zero; lower tick_vol or raise price")
                    last = round(price, 2)
                    ticks.append(
                        TickRecord(
                            timestamp=open_at + timedelta(seconds=pos * _cfg.BRACKET_SECONDS + int(offsets[k])),
                            last_price=last,
                            volume=int(vols[k]),
                            bid_price=round(last - half, 2),
                            bid_qty=int(bqs[k]),
                            ask_price=round(last + half, 2),
                            ask_qty=int(aqs[k]),
                        )
                    )
    logger.debug("Synthesized %d ticks over %d days (seed %d)", len(ticks), days, seed)
    return ticks
