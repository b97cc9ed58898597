"""The fixed model grid: specs, windowed fits and one-step forecasts.

A model ``h(group, w, p, d, q)`` is refit at every forecast origin ``t`` on the
``w`` most recent brackets ``y[t-w+1 .. t]`` and forecasts ``y[t+1]``.
Univariate groups (0-6) fit an ARMAX on the d-differenced price with the
group's features lagged one bracket; multivariate groups (7-12) fit a
VARMA(1, q) on the differenced price stacked with the group's features.

Every session opening inside the window gets its own dummy regressor on the
first-differenced price; for ``d = 2`` that dummy is differenced once more so
it still isolates the single gap move.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial import polynomial as P

from . import config as _cfg
from .common import ValidationError
from .estimation import estimate_armax, estimate_varma
from .market_data import BracketSeries

logger = logging.getLogger(__name__)

FORECAST_COLUMNS = ("group", "w", "p", "d", "q", "t", "forecast", "error", "status")

__all__ = [
    "ModelSpec",
    "WindowData",
    "ForecastHistory",
    "ParamEstimate",
    "ForecastTable",
    "enumerate_models",
    "parameter_dimension",
    "fit_univariate",
    "fit_multivariate",
    "fit_model",
    "forecast_one_step",
    "forecast_differenced",
    "default_forecast_times",
    "run_fixed_grid",
]


@dataclass(frozen=True, slots=True, order=True)
class ModelSpec:
    """Functional index of one fixed model; ordering is ``(group, w, p, d, q)``."""

    group: int
    w: int
    p: int
    d: int
    q: int

    @property
    def kind(self) -> str:
        return "univariate" if self.group in _cfg.UNIVARIATE_GROUPS else "multivariate"

    @property
    def features(self) -> tuple[int, ...]:
        return _cfg.GROUP_FEATURES[self.group]

    @property
    def on_grid(self) -> bool:
        if self.group in _cfg.UNIVARIATE_GROUPS:
            return (
                self.w in _cfg.UNIVARIATE_WINDOWS
                and self.p in _cfg.UNIVARIATE_ORDERS
                and self.q in _cfg.UNIVARIATE_ORDERS
                and self.d in _cfg.DIFF_ORDERS
            )
        if self.group in _cfg.MULTIVARIATE_GROUPS:
            return (
                self.w in _cfg.MULTIVARIATE_WINDOWS
                and self.p == 1
                and self.q in _cfg.MULTIVARIATE_MA_ORDERS
                and self.d in _cfg.DIFF_ORDERS
            )
        return False

    def check(self) -> None:
        if self.group not in _cfg.GROUP_FEATURES:
            raise ValidationError(f"unknown model group {self.group}")
        if self.d < 1 or self.p < 0 or self.q < 0:
            raise ValidationError(f"invalid orders in {self}")
        if self.kind == "multivariate" and self.p != 1:
            raise ValidationError("multivariate models are fitted with p = 1")
        if self.w < self.d + self.p + self.q + 3:
            raise ValidationError(f"window {self.w} too short for {self}")


def enumerate_models(groups: Iterable[int] | None = None, windows: Iterable[int] | None = None) -> list[ModelSpec]:
    """All grid models in ``(group, w, p, d, q)`` order, optionally restricted."""
    group_set = set(groups) if groups is not None else None
    window_set = set(windows) if windows is not None else None
    specs: list[ModelSpec] = []
    for group in _cfg.UNIVARIATE_GROUPS + _cfg.MULTIVARIATE_GROUPS:
        if group_set is not None and group not in group_set:
            continue
        univariate = group in _cfg.UNIVARIATE_GROUPS
        grid_w = _cfg.UNIVARIATE_WINDOWS if univariate else _cfg.MULTIVARIATE_WINDOWS
        grid_p = _cfg.UNIVARIATE_ORDERS if univariate else (1,)
        grid_q = _cfg.UNIVARIATE_ORDERS if univariate else _cfg.MULTIVARIATE_MA_ORDERS
        for w in grid_w:
            if window_set is not None and w not in window_set:
                continue
            for p in grid_p:
                for d in _cfg.DIFF_ORDERS:
                    for q in grid_q:
                        specs.append(ModelSpec(group, w, p, d, q))
    return specs


def parameter_dimension(spec: ModelSpec) -> int:
    """Count of free parameters, excluding gap dummies."""
    k = len(spec.features)
    if spec.kind == "univariate":
        return 1 + spec.p + spec.q + k + 1
    n = 1 + k
    return n + n * n * spec.p + n * n * spec.q + n * n


# ---------------------------------------------------------------------------
# Window data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class WindowData:
    """Levels, features and session-opening flags of one estimation window."""

    y: np.ndarray
    x: np.ndarray
    session_start: np.ndarray

    @classmethod
    def from_arrays(
        cls, y: Sequence[float], x: np.ndarray | None = None, session_start: Sequence[bool] | None = None
    ) -> "WindowData":
        y_arr = np.asarray(y, dtype=float)
        x_arr = np.zeros((y_arr.size, len(_cfg.FEATURE_NAMES))) if x is None else np.asarray(x, dtype=float)
        flags = np.zeros(y_arr.size, dtype=bool) if session_start is None else np.asarray(session_start, dtype=bool)
        if x_arr.shape[0] != y_arr.size or flags.size != y_arr.size:
            raise ValidationError("window arrays are not aligned")
        return cls(y=y_arr, x=x_arr, session_start=flags)

    @classmethod
    def from_series(cls, series: BracketSeries, t: int, w: int) -> "WindowData":
        if series.features is None:
            raise ValidationError("series has no features attached")
        if t - w + 1 < 0 or t >= len(series):
            raise ValidationError(f"window of {w} brackets ending at {t} is outside the series")
        lo = t - w + 1
        return cls(
            y=series.y[lo : t + 1],
            x=series.features[lo : t + 1],
            session_start=series.session_start[lo : t + 1],
        )

    def __len__(self) -> int:
        return int(self.y.size)


def _dummy_columns(flags: np.ndarray, d: int) -> np.ndarray:
    """Dummy regressors aligned with ``diff(y, d)``; all-zero columns are dropped."""
    w = flags.size
    cols = []
    for s in np.flatnonzero(flags):
        if s == 0:
            continue
        col = np.zeros(w)
        col[s] = 1.0
        for _ in range(d - 1):
            col = np.r_[col[0], np.diff(col)]
        col = col[d:]
        if np.any(col):
            cols.append(col)
    return np.column_stack(cols) if cols else np.zeros((w - d, 0))


def _integrate(z_next: float, y: np.ndarray, d: int) -> float:
    """Turn a forecast of ``diff(y, d)`` at ``t+1`` into a level forecast."""
    level = z_next
    for k in range(d):
        level += float(np.diff(y[-(k + 1) :], n=k)[-1])
    return level


# ---------------------------------------------------------------------------
# Estimates and forecasts
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ForecastHistory:
    """What a forecast at ``t`` conditions on: levels up to ``y_t``, ``x_t`` and filtered shocks."""

    y: np.ndarray
    x: np.ndarray
    eps: np.ndarray


@dataclass(slots=True)
class ParamEstimate:
    spec: ModelSpec
    mu: float | np.ndarray
    ar: np.ndarray
    ma: np.ndarray
    beta: np.ndarray
    dummies: np.ndarray
    log_likelihood: float
    converged: bool
    status: str
    history: ForecastHistory
    sigma2: float | None = None
    cov: np.ndarray | None = None
    channels: tuple[int, ...] = ()
    fitted_forecast: float = np.nan
    t: int | None = None


def fit_univariate(spec: ModelSpec, window: WindowData, t: int | None = None) -> ParamEstimate:
    """Exact MLE of the group's ARMAX on the d-differenced window."""
    if spec.kind != "univariate":
        raise ValidationError(f"{spec} is not a univariate model")
    spec.check()
    if len(window) != spec.w:
        raise ValidationError(f"window has {len(window)} brackets, model needs {spec.w}")
    cols = list(spec.features)
    d = spec.d
    y, x = window.y, window.x
    if cols and not np.all(np.isfinite(x[d - 1 :, cols])):
        raise ValidationError("missing feature values in the estimation window")

    z = np.diff(y, n=d)
    m = z.size
    feats = x[d - 1 : -1, cols]
    dummies = _dummy_columns(window.session_start, d)
    X = np.column_stack([np.ones(m), feats, dummies])
    x_next = np.r_[1.0, x[-1, cols], np.zeros(dummies.shape[1])]
    k_feat = len(cols)
    ridge = np.r_[0.0, np.full(k_feat, _cfg.FEATURE_RIDGE), np.zeros(dummies.shape[1])]
    scaled = np.r_[True, np.ones(k_feat, dtype=bool), np.zeros(dummies.shape[1], dtype=bool)]

    fit = estimate_armax(z, X, x_next, spec.p, spec.q, ridge=ridge, scaled=scaled)
    forecast = _integrate(fit.z_pred, y, d) if fit.converged else np.nan
    return ParamEstimate(
        spec=spec,
        mu=float(fit.coef[0]),
        ar=fit.ar,
        ma=fit.ma,
        beta=fit.coef[1 : 1 + k_feat],
        dummies=fit.coef[1 + k_feat :],
        log_likelihood=fit.log_likelihood,
        converged=fit.converged,
        status=fit.status,
        history=ForecastHistory(y=y.copy(), x=x[-1].copy(), eps=fit.eps),
        sigma2=fit.sigma2,
        fitted_forecast=forecast,
        t=t,
    )


def fit_multivariate(spec: ModelSpec, window: WindowData, t: int | None = None) -> ParamEstimate:
    """Exact MLE of a VARMA(1, q) on the differenced price stacked with the group's features.

    A feature channel that is constant over the window carries no stochastic
    information and is left out of the stack.
    """
    if spec.kind != "multivariate":
        raise ValidationError(f"{spec} is not a multivariate model")
    spec.check()
    if len(window) != spec.w:
        raise ValidationError(f"window has {len(window)} brackets, model needs {spec.w}")
    d = spec.d
    y, x = window.y, window.x
    z = np.diff(y, n=d)
    aligned = x[d:]
    if not np.all(np.isfinite(aligned[:, list(spec.features)])):
        raise ValidationError("missing feature values in the estimation window")
    channels = tuple(c for c in spec.features if np.ptp(aligned[:, c]) > 0)
    if len(channels) < len(spec.features):
        logger.debug("%s: dropping constant feature channels %s", spec, set(spec.features) - set(channels))
    S = np.column_stack([z, aligned[:, list(channels)]])
    D = _dummy_columns(window.session_start, d)

    fit = estimate_varma(S, D, spec.q)
    forecast = _integrate(float(fit.s_pred[0]), y, d) if fit.converged else np.nan
    return ParamEstimate(
        spec=spec,
        mu=fit.mu,
        ar=fit.ar,
        ma=fit.ma,
        beta=np.zeros(0),
        dummies=fit.dummies,
        log_likelihood=fit.log_likelihood,
        converged=fit.converged,
        status=fit.status,
        history=ForecastHistory(y=y.copy(), x=x[-1].copy(), eps=fit.eps),
        cov=fit.cov,
        channels=channels,
        fitted_forecast=forecast,
        t=t,
    )


def fit_model(spec: ModelSpec, window: WindowData, t: int | None = None) -> ParamEstimate:
    if spec.kind == "univariate":
        return fit_univariate(spec, window, t)
    return fit_multivariate(spec, window, t)


def _check_history(estimate: ParamEstimate, history: ForecastHistory) -> None:
    if not estimate.converged:
        raise ValidationError(f"{estimate.spec}: estimate did not converge")
    needed = estimate.spec.p + estimate.spec.d + 1
    if history.y.size < needed:
        raise ValidationError(f"forecast needs {needed} past levels, got {history.y.size}")
    used = estimate.channels if estimate.spec.kind == "multivariate" else estimate.spec.features
    if not np.all(np.isfinite(history.x[list(used)])):
        raise ValidationError("missing feature value at the forecast origin")


def forecast_one_step(estimate: ParamEstimate, history: ForecastHistory | None = None) -> float:
    """Conditional mean of ``y_{t+1}`` written directly in levels.

    The AR polynomial is multiplied out with ``(1 - L)^d`` so the forecast is
    ``c + g(L) y_t + ma(L) eps_t + beta' x_t``.
    """
    history = history or estimate.history
    _check_history(estimate, history)
    spec = estimate.spec
    y = history.y
    if spec.kind == "multivariate":
        return _integrate(_varma_next(estimate, history), y, spec.d)

    lag_poly = P.polymul(np.r_[1.0, -estimate.ar], P.polypow([1.0, -1.0], spec.d))
    level = float(estimate.mu) + float(estimate.beta @ history.x[list(spec.features)])
    for i in range(1, lag_poly.size):
        level -= lag_poly[i] * y[-i]
    for j, phi in enumerate(estimate.ma):
        level += phi * history.eps[j]
    return float(level)


def forecast_differenced(estimate: ParamEstimate, history: ForecastHistory | None = None) -> float:
    """Forecast ``diff(y, d)`` at ``t+1`` from the ARMAX recursion, then integrate."""
    history = history or estimate.history
    _check_history(estimate, history)
    spec = estimate.spec
    if spec.kind == "multivariate":
        return _integrate(_varma_next(estimate, history), history.y, spec.d)
    z = np.diff(history.y, n=spec.d)
    z_next = float(estimate.mu) + float(estimate.beta @ history.x[list(spec.features)])
    for i, gamma in enumerate(estimate.ar, start=1):
        z_next += gamma * z[-i]
    for j, phi in enumerate(estimate.ma):
        z_next += phi * history.eps[j]
    return _integrate(z_next, history.y, spec.d)


def _varma_next(estimate: ParamEstimate, history: ForecastHistory) -> float:
    z_t = float(np.diff(history.y, n=estimate.spec.d)[-1])
    state = np.r_[z_t, history.x[list(estimate.channels)]]
    mu = np.asarray(estimate.mu, dtype=float)
    return float(mu[0] + estimate.ar[0] @ state + estimate.ma[0] @ history.eps)


# ---------------------------------------------------------------------------
# Forecast table
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ForecastTable:
    """Forecasts ``y_{t+1|t}(h)`` for every model (rows) and origin (columns)."""

    specs: list[ModelSpec]
    times: np.ndarray
    forecasts: np.ndarray
    status: np.ndarray
    origin: np.ndarray  # y_t per origin
    realized: np.ndarray  # y_{t+1} per origin, NaN where not yet observed
    _index: dict[ModelSpec, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._index = {spec: i for i, spec in enumerate(self.specs)}

    @property
    def errors(self) -> np.ndarray:
        return self.realized[None, :] - self.forecasts

    def row(self, spec: ModelSpec) -> int:
        return self._index[spec]

    def subset(self, specs: Sequence[ModelSpec]) -> "ForecastTable":
        rows = [self.row(s) for s in specs]
        return ForecastTable(
            specs=list(specs),
            times=self.times.copy(),
            forecasts=self.forecasts[rows],
            status=self.status[rows],
            origin=self.origin,
            realized=self.realized,
        )

    def to_frame(self) -> pd.DataFrame:
        n_models, n_times = self.forecasts.shape
        errors = self.errors
        frame = pd.DataFrame(
            {
                "group": np.repeat([s.group for s in self.specs], n_times),
                "w": np.repeat([s.w for s in self.specs], n_times),
                "p": np.repeat([s.p for s in self.specs], n_times),
                "d": np.repeat([s.d for s in self.specs], n_times),
                "q": np.repeat([s.q for s in self.specs], n_times),
                "t": np.tile(self.times, n_models),
                "forecast": self.forecasts.ravel(),
                "error": errors.ravel(),
                "status": self.status.ravel(),
            }
        )
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, series: BracketSeries) -> "ForecastTable":
        keys = ["group", "w", "p", "d", "q"]
        specs = sorted({ModelSpec(*map(int, row)) for row in frame[keys].itertuples(index=False)})
        times = np.sort(frame["t"].unique()).astype(int)
        frame = frame.assign(spec_key=[ModelSpec(*map(int, r)) for r in frame[keys].itertuples(index=False)])
        forecasts = np.full((len(specs), times.size), np.nan)
        status = np.full((len(specs), times.size), "missing", dtype=object)
        col = {int(t): j for j, t in enumerate(times)}
        row = {s: i for i, s in enumerate(specs)}
        for rec in frame.itertuples(index=False):
            i, j = row[rec.spec_key], col[int(rec.t)]
            forecasts[i, j] = rec.forecast
            status[i, j] = rec.status
        origin, realized = _origin_and_realized(series, times)
        return cls(specs=specs, times=times, forecasts=forecasts, status=status, origin=origin, realized=realized)


def _origin_and_realized(series: BracketSeries, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y = series.y
    origin = y[times]
    realized = np.array([y[t + 1] if t + 1 < y.size else np.nan for t in times], dtype=float)
    return origin, realized


def default_forecast_times(series: BracketSeries, specs: Sequence[ModelSpec]) -> np.ndarray:
    """Eligible origins with a full window for every model and a known next price."""
    if not specs:
        raise ValidationError("empty model grid")
    max_w = max(s.w for s in specs)
    idx = np.arange(len(series))
    mask = series.eligible & (idx >= max_w - 1) & (idx + 1 < len(series))
    return idx[mask]


def _fit_over_times(
    spec: ModelSpec, y: np.ndarray, x: np.ndarray, flags: np.ndarray, times: np.ndarray, offset: int = 0
) -> tuple[np.ndarray, list[str]]:
    """Refit *spec* at each origin; arrays start at bracket *offset* of the series."""
    forecasts = np.full(times.size, np.nan)
    status: list[str] = []
    for j, t in enumerate(times):
        hi = int(t) - offset + 1
        lo = hi - spec.w
        window = WindowData(y=y[lo:hi], x=x[lo:hi], session_start=flags[lo:hi])
        try:
            est = fit_model(spec, window, int(t))
        except (ValidationError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            logger.debug("%s at t=%d failed: %s", spec, t, exc)
            status.append("failed")
            continue
        status.append(est.status)
        if est.converged:
            forecasts[j] = est.fitted_forecast
    return forecasts, status


def _fit_task(args: tuple) -> tuple[np.ndarray, list[str]]:
    return _fit_over_times(*args)


def _grid_tasks(series: BracketSeries, specs: Sequence[ModelSpec], times: np.ndarray, chunk: int) -> list[tuple]:
    """One task per model and run of *chunk* consecutive origins, carrying only the brackets it reads."""
    y, x, flags = series.y, series.features, series.session_start
    blocks = [times[i : i + chunk] for i in range(0, times.size, chunk)]
    tasks = []
    for spec in specs:
        for block in blocks:
            lo = int(block[0]) - spec.w + 1
            hi = int(block[-1]) + 1
            tasks.append((spec, y[lo:hi], x[lo:hi], flags[lo:hi], block, lo))
    return tasks


def run_fixed_grid(
    series: BracketSeries,
    specs: Sequence[ModelSpec],
    times: Sequence[int] | None = None,
    *,
    threads: int = 1,
) -> ForecastTable:
    """Refit every model at every origin in *times* and collect one-step forecasts.

    Each (model, block of origins) pair is an independent task; with
    ``threads > 1`` they run in a process pool and are merged back in grid
    order, so the table does not depend on the worker count.
    """
    if series.features is None:
        raise ValidationError("series has no features attached")
    specs = sorted(specs)
    for spec in specs:
        spec.check()
    times_arr = default_forecast_times(series, specs) if times is None else np.asarray(sorted(times), dtype=int)
    max_w = max(s.w for s in specs)
    if times_arr.size and times_arr[0] < max_w - 1:
        raise ValidationError(f"origin {times_arr[0]} has less than {max_w} brackets of history")
    if times_arr.size and not series.eligible[times_arr].all():
        raise ValidationError("forecast origins must be forecast-eligible brackets")

    forecasts = np.full((len(specs), times_arr.size), np.nan)
    status = np.full((len(specs), times_arr.size), "missing", dtype=object)
    if times_arr.size:
        tasks = _grid_tasks(series, specs, times_arr, max(int(_cfg.GRID_CHUNK), 1))
        logger.info(
            "Fitting %d models at %d origins in %d tasks (%d workers)",
            len(specs),
            times_arr.size,
            len(tasks),
            max(threads, 1),
        )
        if threads > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_fit_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
        else:
            results = [_fit_task(task) for task in tasks]
        row = {spec: i for i, spec in enumerate(specs)}
        col = {int(t): j for j, t in enumerate(times_arr)}
        for task, (values, states) in zip(tasks, results):
            i, cols = row[task[0]], [col[int(t)] for t in task[4]]
            forecasts[i, cols] = values
            status[i, cols] = states

    origin, realized = _origin_and_realized(series, times_arr)
    failed = int((status != "ok").sum())
    if failed:
        logger.warning("%d of %d grid cells have no forecast", failed, status.size)
    return ForecastTable(
        specs=list(specs), times=times_arr, forecasts=forecasts, status=status, origin=origin, realized=realized
    )
