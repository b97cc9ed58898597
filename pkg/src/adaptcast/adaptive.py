"""Adaptive selection over the fixed model grid.

At each forecast origin the candidate set is shrunk to models whose forecast
stays within a band around the current price, each candidate is scored by a
geometrically decayed sum of thresholded past losses, and the minimiser is
the learnt model ``h*_t``. Group-14 selectors add a penalty (or reward) for
moving away from the previous selection.

Time is indexed by forecast-origin column ``k`` of a :class:`ForecastTable`.
Scoring at column ``k`` only reads errors of columns ``k - loss_window .. k - 1``,
all of which are realized by the time origin ``k`` is reached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import config as _cfg
from .codes import selector_code
from .common import ConfigError, ValidationError
from .model_zoo import ForecastTable, ModelSpec

logger = logging.getLogger(__name__)

SELECTION_COLUMNS = ("t", "group", "w", "p", "d", "q", "loss", "filter_size", "forecast", "fallback")
MODES = ("group13", "group14")

__all__ = [
    "SelectorConfig",
    "SelectionRecord",
    "LossPanel",
    "filter_candidates",
    "local_loss",
    "nearest_rank",
    "global_loss",
    "penalty",
    "select",
    "run_selector",
    "selections_frame",
    "selections_from_frame",
    "decay_profile",
]


@dataclass(frozen=True, slots=True)
class SelectorConfig:
    """One learnt-model configuration.

    ``penalty_type`` is 0 for group 13 and 1, 2 or 3 for group 14. Penalty
    fractions left as ``None`` take the defaults for the type.
    """

    name: str = "default"
    mode: str = "group13"
    penalty_type: int = 0
    lam: float = 1.0
    c1: float = 0.25
    c2: float = 0.75
    c3_frac: float | None = None
    c4_frac: float | None = None
    c5_frac: float | None = None
    loss_window: int = _cfg.LOSS_WINDOW
    filter_band: float = _cfg.FILTER_BAND
    warmup: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"selector '{self.name}': mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "group13" and self.penalty_type != 0:
            raise ConfigError(f"selector '{self.name}': group13 takes no penalty type")
        if self.mode == "group14" and self.penalty_type not in (1, 2, 3):
            raise ConfigError(f"selector '{self.name}': group14 needs penalty type 1, 2 or 3")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"selector '{self.name}': lambda must lie in (0, 1], got {self.lam}")
        for q in (self.c1, self.c2):
            if q not in _cfg.QUANTILE_GRID:
                raise ConfigError(f"selector '{self.name}': quantile {q} not in {_cfg.QUANTILE_GRID}")
        if self.c1 >= self.c2:
            raise ConfigError(f"selector '{self.name}': c1 quantile must be below c2")
        if self.loss_window < 1:
            raise ConfigError(f"selector '{self.name}': loss window must be positive")
        if self.filter_band <= 0:
            raise ConfigError(f"selector '{self.name}': filter band must be positive")
        if self.warmup is not None and self.warmup < 1:
            raise ConfigError(f"selector '{self.name}': warm-up must be at least 1")

    @property
    def fractions(self) -> dict[str, float]:
        if self.penalty_type == 0:
            return {}
        base = dict(_cfg.TYPE1_FRACS) if self.penalty_type == 1 else dict(_cfg.TYPE23_FRACS)
        overrides = {"c3": self.c3_frac, "c4": self.c4_frac, "c5": self.c5_frac}
        for key, value in overrides.items():
            if value is not None and key in base:
                base[key] = value
        return base

    @property
    def code(self) -> str:
        return selector_code(self.mode, self.penalty_type, self.lam, self.c1, self.c2)

    @property
    def effective_warmup(self) -> int:
        return self.loss_window if self.warmup is None else self.warmup


@dataclass(frozen=True, slots=True)
class SelectionRecord:
    """Outcome at one origin; ``spec`` is ``None`` for a random-walk fallback."""

    t: int
    spec: ModelSpec | None
    loss: float
    filter_size: int
    forecast: float

    @property
    def fallback(self) -> bool:
        return self.spec is None


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def filter_candidates(forecasts: Sequence[float], y_t: float, band: float = _cfg.FILTER_BAND) -> np.ndarray:
    """Mask of models with a positive forecast strictly inside ``y_t * (1 +/- band)``."""
    if not y_t > 0:
        raise ValidationError(f"current price must be positive, got {y_t}")
    f = np.asarray(forecasts, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.isfinite(f) & (f > 0) & (np.abs(f / y_t - 1.0) < band)


def local_loss(x: float | np.ndarray, c1: float | np.ndarray, c2: float | np.ndarray) -> float | np.ndarray:
    """Zero below ``c1``, quadratic up to ``c2``, linear beyond; C^1 at both knots."""
    arr = np.asarray(x, dtype=float)
    lo = np.asarray(c1, dtype=float)
    hi = np.asarray(c2, dtype=float)
    if np.any(arr < 0):
        raise ValidationError("local loss takes absolute errors")
    if np.any(lo < 0) or np.any(lo > hi):
        raise ValidationError("local loss needs 0 <= c1 <= c2")
    with np.errstate(invalid="ignore"):
        quad = 0.5 * (arr - lo) ** 2
        lin = (hi - lo) * arr + 0.5 * (lo**2 - hi**2)
        out = np.where(arr <= lo, 0.0, np.where(arr <= hi, quad, lin))
    return float(out) if out.ndim == 0 else out


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: the ``ceil(q * n)``-th smallest value."""
    ordered = np.sort(np.asarray(values, dtype=float))
    if ordered.size == 0:
        raise ValidationError("quantile of an empty set")
    rank = max(1, math.ceil(q * ordered.size - 1e-12))
    return float(ordered[rank - 1])


def global_loss(
    abs_errors: Sequence[float],
    lam: float,
    c1: float | Sequence[float],
    c2: float | Sequence[float],
) -> float:
    """Decayed sum of local losses over one model's error history, oldest first.

    The newest term has weight 1 and each step back multiplies by ``lam``.
    ``c1``/``c2`` are per-term thresholds (or scalars). Missing terms are skipped.
    """
    e = np.asarray(abs_errors, dtype=float)
    if e.size == 0:
        raise ValidationError("global loss needs at least one error")
    lo = np.broadcast_to(np.asarray(c1, dtype=float), e.shape)
    hi = np.broadcast_to(np.asarray(c2, dtype=float), e.shape)
    keep = ~np.isnan(e)
    if not keep.any():
        raise ValidationError("global loss needs at least one error")
    weights = lam ** np.arange(e.size - 1, -1, -1, dtype=float)
    losses = local_loss(e[keep], lo[keep], hi[keep])
    return float(np.sum(weights[keep] * losses))


def penalty(
    spec: ModelSpec,
    previous: ModelSpec | None,
    penalty_type: int,
    l_star: float,
    fractions: dict[str, float] | None = None,
) -> float:
    """Switching penalty (or reward when negative) relative to the previous selection."""
    if penalty_type == 0 or previous is None:
        return 0.0
    if penalty_type not in (1, 2, 3):
        raise ValidationError(f"unknown penalty type {penalty_type}")
    fr = fractions or (_cfg.TYPE1_FRACS if penalty_type == 1 else _cfg.TYPE23_FRACS)
    c3 = fr["c3"] * l_star
    c4 = fr["c4"] * l_star
    if penalty_type == 1:
        orders = abs((spec.p + spec.d + spec.q) - (previous.p + previous.d + previous.q))
        return c3 * orders + c4 * abs(spec.w - previous.w)
    c5 = fr["c5"] * l_star
    pq = abs((spec.p + spec.q) - (previous.p + previous.q))
    if penalty_type == 3 and spec.d != previous.d:
        pq = 0
    return c3 * pq + c4 * (_cfg.REFERENCE_WINDOW - spec.w) + c5 * abs(spec.d - previous.d)


# ---------------------------------------------------------------------------
# Loss panel
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class LossPanel:
    """Local losses ``L(|e_k(h)|; C1(k), C2(k))`` for every model and origin column.

    Missing errors are replaced by the cross-sectional median absolute error
    of the column; columns with no realized error at all are NaN and skipped.
    """

    losses: np.ndarray  # (n_models, n_times)
    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def build(cls, table: ForecastTable, c1_q: float, c2_q: float) -> "LossPanel":
        abs_err = np.abs(table.errors)
        n_models, n_times = abs_err.shape
        losses = np.full((n_models, n_times), np.nan)
        c1 = np.full(n_times, np.nan)
        c2 = np.full(n_times, np.nan)
        filled = 0
        for k in range(n_times):
            col = abs_err[:, k]
            present = ~np.isnan(col)
            if not present.any():
                continue
            if not present.all():
                col = np.where(present, col, float(np.median(col[present])))
                filled += int((~present).sum())
            c1[k] = nearest_rank(abs_err[present, k], c1_q)
            c2[k] = nearest_rank(abs_err[present, k], c2_q)
            losses[:, k] = local_loss(col, c1[k], c2[k])
        if filled:
            logger.debug("Filled %d missing errors with the cross-sectional median", filled)
        return cls(losses=losses, c1=c1, c2=c2)

    def global_losses(self, k: int, lam: float, window: int) -> np.ndarray:
        """Global loss of every model at origin column *k*; NaN when no term is usable."""
        lo = max(0, k - window)
        block = self.losses[:, lo:k]
        usable = ~np.isnan(block[0]) if block.size else np.zeros(0, dtype=bool)
        if not usable.any():
            return np.full(self.losses.shape[0], np.nan)
        weights = lam ** np.arange(k - 1 - lo, -1, -1, dtype=float)
        return block[:, usable] @ weights[usable]


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def select(
    k: int,
    table: ForecastTable,
    config: SelectorConfig,
    previous: ModelSpec | None = None,
    panel: LossPanel | None = None,
) -> SelectionRecord:
    """Pick ``h*`` at origin column *k* of *table*.

    Ties go to the first model in grid order. With no admissible candidate
    the record is a random-walk fallback that forecasts ``y_t``.
    """
    if not 0 <= k < table.times.size:
        raise ValidationError(f"origin column {k} outside the forecast table")
    if k < 1:
        raise ValidationError("selection needs at least one realized error")
    panel = panel or LossPanel.build(table, config.c1, config.c2)
    t = int(table.times[k])
    y_t = float(table.origin[k])

    mask = filter_candidates(table.forecasts[:, k], y_t, config.filter_band)
    scores = panel.global_losses(k, config.lam, config.loss_window)
    cand = np.flatnonzero(mask & ~np.isnan(scores))
    if cand.size == 0:
        logger.debug("No admissible model at t=%d, falling back to y_t", t)
        return SelectionRecord(t=t, spec=None, loss=np.nan, filter_size=0, forecast=y_t)

    g = scores[cand]
    objective = g
    if config.mode == "group14" and previous is not None:
        l_star = float(g.min())
        fr = config.fractions
        objective = g + np.array(
            [penalty(table.specs[i], previous, config.penalty_type, l_star, fr) for i in cand], dtype=float
        )
    best = int(cand[int(np.argmin(objective))])
    return SelectionRecord(
        t=t,
        spec=table.specs[best],
        loss=float(scores[best]),
        filter_size=int(cand.size),
        forecast=float(table.forecasts[best, k]),
    )


def run_selector(table: ForecastTable, config: SelectorConfig) -> list[SelectionRecord]:
    """Sequential selection from the warm-up column to the end of *table*."""
    table_specs = list(table.specs)
    if table_specs != sorted(table_specs):
        raise ValidationError("forecast table must list models in grid order")
    start = config.effective_warmup
    if start >= table.times.size:
        logger.warning(
            "Selector '%s': warm-up %d leaves no origins in a table of %d", config.name, start, table.times.size
        )
        return []
    if start < config.loss_window:
        logger.info(
            "Selector '%s' starts before a full loss window; early scores use all available errors", config.name
        )

    panel = LossPanel.build(table, config.c1, config.c2)
    records: list[SelectionRecord] = []
    previous: ModelSpec | None = None
    for k in range(start, table.times.size):
        record = select(k, table, config, previous, panel)
        records.append(record)
        if record.spec is not None:
            previous = record.spec
    fallbacks = sum(r.fallback for r in records)
    if fallbacks:
        logger.warning("Selector '%s': %d fallback forecasts out of %d", config.name, fallbacks, len(records))
    logger.info("Selector '%s' made %d selections", config.name, len(records))
    return records


def selections_frame(records: Iterable[SelectionRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        spec = r.spec
        rows.append(
            {
                "t": r.t,
                "group": spec.group if spec else pd.NA,
                "w": spec.w if spec else pd.NA,
                "p": spec.p if spec else pd.NA,
                "d": spec.d if spec else pd.NA,
                "q": spec.q if spec else pd.NA,
                "loss": r.loss,
                "filter_size": r.filter_size,
                "forecast": r.forecast,
                "fallback": int(r.fallback),
            }
        )
    frame = pd.DataFrame(rows, columns=list(SELECTION_COLUMNS))
    for col in ("group", "w", "p", "d", "q"):
        frame[col] = frame[col].astype("Int64")
    return frame


def selections_from_frame(frame: pd.DataFrame) -> list[SelectionRecord]:
    records = []
    for row in frame.itertuples(index=False):
        spec = None if pd.isna(row.group) else ModelSpec(int(row.group), int(row.w), int(row.p), int(row.d), int(row.q))
        records.append(
            SelectionRecord(
                t=int(row.t),
                spec=spec,
                loss=float(row.loss),
                filter_size=int(row.filter_size),
                forecast=float(row.forecast),
            )
        )
    return records


def decay_profile(lambdas: Iterable[float] = _cfg.LAMBDA_GRID, window: int = _cfg.LOSS_WINDOW) -> pd.DataFrame:
    """Half period ``log_lambda(0.5)`` and the weight on the oldest term for each decay."""
    rows = []
    for lam in lambdas:
        if not 0.0 < lam <= 1.0:
            raise ValidationError(f"lambda must lie in (0, 1], got {lam}")
        half = math.inf if lam == 1.0 else math.log(0.5) / math.log(lam)
        rows.append({"lambda": lam, "half_period": half, "oldest_weight": lam ** (window - 1)})
    return pd.DataFrame(rows, columns=["lambda", "half_period", "oldest_weight"])
