"""Dickey–Fuller testing in levels and the rolling iterated-difference scan.

The regression is ``y_t = c + phi_1 y_{t-1} + phi_2 y_{t-2} + e_t`` and the
statistic is ``(phi_1 - 1) / se(phi_1)``. P-values come from the constant,
no-trend response surface; finite-sample critical values are kept for
cross-checking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from statsmodels.tsa.adfvalues import mackinnoncrit, mackinnonp

from . import config as _cfg
from .common import DegenerateInputError, ValidationError

logger = logging.getLogger(__name__)

SCAN_COLUMNS = ("t", "w", "d", "p_value", "d_star")

__all__ = [
    "AdfResult",
    "RollingAdfScan",
    "adf_test",
    "adf_pvalue",
    "critical_values",
    "rolling_adf",
    "nonstationary_times",
]


@dataclass(frozen=True, slots=True)
class AdfResult:
    t_stat: float
    p_value: float
    n_used: int
    lag: int = _cfg.ADF_LAG

    def rejects(self, alpha: float = _cfg.ADF_ALPHA) -> bool:
        return self.p_value < alpha


def adf_pvalue(stat: float) -> float:
    """Constant, no-trend response-surface p-value for one unit root."""
    return float(mackinnonp(stat, regression="c", N=1))


def critical_values(nobs: int) -> dict[str, float]:
    values = mackinnoncrit(N=1, regression="c", nobs=nobs)
    return {level: float(v) for level, v in zip(("1%", "5%", "10%"), values)}


def adf_test(series: Sequence[float]) -> AdfResult:
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or y.size < _cfg.ADF_MIN_LENGTH:
        raise ValidationError(f"ADF test needs at least {_cfg.ADF_MIN_LENGTH} observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValidationError("ADF input contains missing values")
    if np.ptp(y) == 0:
        raise DegenerateInputError("constant series has no variance to test")

    lag = _cfg.ADF_LAG
    target = y[lag:]
    design = np.column_stack([np.ones(target.size), y[lag - 1 : -1], y[: -lag]])
    nobs, k = design.shape
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < k:
        raise DegenerateInputError("lagged regressors are collinear")
    resid = target - design @ coef
    sigma2 = float(resid @ resid) / (nobs - k)
    if sigma2 <= 0:
        raise DegenerateInputError("regression fits the series exactly")
    cov = sigma2 * np.linalg.inv(design.T @ design)
    t_stat = float((coef[1] - 1.0) / np.sqrt(cov[1, 1]))
    return AdfResult(t_stat=t_stat, p_value=adf_pvalue(t_stat), n_used=nobs, lag=lag)


@dataclass(slots=True)
class RollingAdfScan:
    """P-values ``p_t(d; w)`` per origin ``t`` and level ``d``, with the recommended order ``d*_t``."""

    w: int
    times: np.ndarray
    p_values: np.ndarray  # (len(times), d_max + 1); NaN where not computed
    d_star: np.ndarray
    d_max: int = 2
    off_grid: bool = False
    alpha: float = field(default=_cfg.ADF_ALPHA)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (int(t), self.w, d, self.p_values[i, d], int(self.d_star[i]))
            for i, t in enumerate(self.times)
            for d in range(self.d_max + 1)
            if not np.isnan(self.p_values[i, d]) or d == 0
        ]
        return pd.DataFrame(rows, columns=list(SCAN_COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, w: int, alpha: float = _cfg.ADF_ALPHA) -> "RollingAdfScan":
        rows = frame[frame["w"] == w]
        if rows.empty:
            raise ValidationError(f"scan has no rows for window {w}")
        d_max = int(rows["d"].max())
        table = rows.pivot(index="t", columns="d", values="p_value").reindex(columns=range(d_max + 1))
        d_star = rows.groupby("t")["d_star"].first().reindex(table.index)
        return cls(
            w=w,
            times=table.index.to_numpy(dtype=int),
            p_values=table.to_numpy(dtype=float),
            d_star=d_star.to_numpy(dtype=int),
            d_max=d_max,
            off_grid=w not in _cfg.ADF_WINDOWS,
            alpha=alpha,
        )


def rolling_adf(series: Sequence[float], w: int, d_max: int = 2, alpha: float = _cfg.ADF_ALPHA) -> RollingAdfScan:
    """Test ``y[t-w:t]`` for every ``t >= w``, differencing until the unit root is rejected.

    The scan at ``t`` never touches ``y[t]`` or later.
    """
    y = np.asarray(series, dtype=float)
    if d_max < 0 or d_max > 2:
        raise ValidationError("d_max must be 0, 1 or 2")
    if y.size <= w + d_max:
        raise ValidationError(f"series of length {y.size} too short for window {w}")
    off_grid = w not in _cfg.ADF_WINDOWS
    if off_grid:
        logger.warning("Rolling ADF window %d is outside the usual grid %s", w, _cfg.ADF_WINDOWS)

    times = np.arange(w, y.size)
    p_values = np.full((times.size, d_max + 1), np.nan)
    d_star = np.full(times.size, d_max, dtype=int)
    degenerate = 0
    for i, t in enumerate(times):
        window = y[t - w : t]
        for d in range(d_max + 1):
            try:
                p_values[i, d] = adf_test(window).p_value
            except (DegenerateInputError, ValidationError):
                degenerate += 1
                p_values[i, d] = np.nan
            if p_values[i, d] < alpha:
                d_star[i] = d
                break
            window = np.diff(window)
    if degenerate:
        logger.debug("Rolling ADF w=%d: %d degenerate windows left untested", w, degenerate)
    return RollingAdfScan(
        w=w, times=times, p_values=p_values, d_star=d_star, d_max=d_max, off_grid=off_grid, alpha=alpha
    )


def nonstationary_times(scan: RollingAdfScan) -> np.ndarray:
    """Times where no difference order up to ``d_max`` rejects the unit root."""
    tested = ~np.isnan(scan.p_values).any(axis=1)
    fails = np.all(scan.p_values >= scan.alpha, axis=1)
    return scan.times[tested & fails]
