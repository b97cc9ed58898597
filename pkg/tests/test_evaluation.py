import math

import numpy as np
import pandas as pd
import pytest

from adaptcast.common import UndefinedStatisticError, ValidationError
from adaptcast.evaluation import (
    PerfReport,
    baseline_report,
    cum_pl_frame,
    error_summary,
    evaluate_forecasts,
    mse_mae,
    rank_models,
    reports_frame,
    session_origins,
    session_pl,
    sharpe,
    signal_report,
    signal_session_pl,
)


def _rising(n=19):
    return 100.0 + np.arange(n) * 0.5 + np.linspace(0, 0.3, n) ** 2


def test_mse_mae_hand_values():
    mse, mae = mse_mae([1.0, 2.0], [2.0, 4.0])
    assert mse == pytest.approx(2.5)
    assert mae == pytest.approx(1.5)
    with pytest.raises(ValidationError):
        mse_mae([], [])
    with pytest.raises(ValidationError):
        mse_mae([1.0, np.nan], [1.0, 2.0])


def test_mse_mae_scale(rng):
    f, a = rng.normal(size=30), rng.normal(size=30)
    mse, mae = mse_mae(f, a)
    mse3, mae3 = mse_mae(3 * f, 3 * a)
    assert mse3 == pytest.approx(9 * mse, rel=1e-12)
    assert mae3 == pytest.approx(3 * mae, rel=1e-12)


def test_long_only_pl_on_rising_prices():
    p = _rising()
    pl = session_pl(p + 1.0, p, 0)
    expected = sum((p[t + 1] - p[t]) / p[t] for t in range(1, 18))
    assert pl == pytest.approx(expected, abs=1e-10)


def test_flat_signal_does_not_trade():
    p = _rising()
    alpha = np.ones(19)
    alpha[5] = 0.0
    alpha[9] = np.nan
    expected = sum((p[t + 1] - p[t]) / p[t] for t in range(1, 18) if t not in (5, 9))
    assert signal_session_pl(alpha, p, 0) == pytest.approx(expected, abs=1e-10)


def test_pl_sign_flip(rng):
    p = 100.0 + np.cumsum(rng.normal(size=19))
    f = p + rng.normal(size=19)
    assert session_pl(2 * p - f, p, 0) == pytest.approx(-session_pl(f, p, 0), abs=1e-12)


def test_baseline_session_pl():
    assert session_pl([], np.full(19, 50.0), 0, baseline=True) == 0.0
    p = _rising()
    assert session_pl([], p, 0, baseline=True) == pytest.approx((p[18] - p[1]) / p[1])
    with pytest.raises(ValidationError):
        session_pl(p, p[:15], 0)


def test_sharpe_values():
    assert sharpe([0.02, 0.0]) == pytest.approx(11.225, abs=1e-3)
    assert sharpe([0.01, -0.01]) == 0.0
    with pytest.raises(UndefinedStatisticError):
        sharpe([0.01, 0.01, 0.01])
    with pytest.raises(ValidationError):
        sharpe([0.01])


def _two_day(series_factory, rng):
    y = 100.0 + np.cumsum(rng.normal(scale=0.2, size=96))
    features = np.column_stack([rng.uniform(-1, 1, 96), rng.normal(size=96), rng.uniform(0, 1, (96, 2))])
    series = series_factory(y, days=2, features=features)
    times = np.flatnonzero(series.eligible & (np.arange(96) + 1 < 96))
    return series, times


def test_day_pl_adds_both_sessions(rng, series_factory):
    series, times = _two_day(series_factory, rng)
    y = series.y
    report = evaluate_forecasts("M0_12_PDQ010", times, y[times] + 1.0, series)
    origins = session_origins(series)
    assert [t_s for _, _, t_s in origins] == [5, 29, 53, 77]
    signal = np.ones(96)
    first_day = signal_session_pl(signal, y, 5) + signal_session_pl(signal, y, 29)
    assert report.n_days == 2
    assert report.day_pl.iloc[0] == pytest.approx(first_day, abs=1e-12)
    assert report.cum_pl.iloc[-1] == pytest.approx(report.day_pl.sum())
    assert report.mse == pytest.approx(np.mean((y[times + 1] - y[times] - 1.0) ** 2))
    assert report.first_t == times[0] and report.last_t == times[-1]


def test_incomplete_days_are_left_out(rng, series_factory):
    series, times = _two_day(series_factory, rng)
    # drop one afternoon origin of the second day
    kept = times[times != 80]
    report = evaluate_forecasts("M0_12_PDQ010", kept, series.y[kept], series)
    assert report.n_days == 1
    subset = evaluate_forecasts("M0_12_PDQ010", times, series.y[times], series, index_subset=range(0, 48))
    assert subset.n_forecasts == int((times < 48).sum())


def test_baseline_and_signal_reports(rng, series_factory):
    series, times = _two_day(series_factory, rng)
    base = baseline_report(series, times)
    y = series.y
    expected = (y[23] - y[6]) / y[6] + (y[47] - y[30]) / y[30]
    assert base.model_code == "BASELINE"
    assert base.day_pl.iloc[0] == pytest.approx(expected)
    assert base.mse == pytest.approx(np.mean((y[times + 1] - y[times]) ** 2))

    sig = signal_report(series, times, "oib_mean")
    assert sig.model_code == "SIGNAL_OIB_MEAN"
    assert math.isnan(sig.mse) and sig.n_days == 2
    with pytest.raises(ValidationError):
        signal_report(series, times, "pscore")


def _report(code, mse, sr):
    return PerfReport(code, mse, mse, sr, pd.Series([0.01, 0.02]), n_days=2)


def test_rank_models_puts_missing_last():
    reports = [_report("a", 2.0, 1.0), _report("b", np.nan, np.nan), _report("c", 1.0, 3.0)]
    assert [r.model_code for r in rank_models(reports, "mse")] == ["c", "a", "b"]
    assert [r.model_code for r in rank_models(reports, "sr", k=1)] == ["c"]
    with pytest.raises(ValidationError):
        rank_models(reports, "mae")


def test_frames(rng, series_factory):
    series, times = _two_day(series_factory, rng)
    report = evaluate_forecasts("M0_12_PDQ010", times, series.y[times] + 0.1, series)
    frame = reports_frame([report, baseline_report(series, times)])
    assert frame["model_code"].tolist() == ["M0_12_PDQ010", "BASELINE"]
    cum = cum_pl_frame([report])
    assert list(cum.columns) == ["date", "model_code", "cum_pl"]
    assert cum["cum_pl"].iloc[-1] == pytest.approx(report.day_pl.sum())


def test_error_summary():
    errors = np.array([[1.0, -2.0, 3.0], [np.nan, np.nan, 0.5]])
    summary = error_summary(["a", "b"], errors, [10, 11, 12], [10, 11]).set_index("model_code")
    assert summary.loc["a", "abs_mean"] == pytest.approx(1.5)
    assert summary.loc["a", "sq_max"] == pytest.approx(4.0)
    assert summary.loc["b", "n"] == 0
