import numpy as np
import pytest

from adaptcast.common import ValidationError
from adaptcast.model_zoo import (
    ForecastTable,
    ModelSpec,
    WindowData,
    enumerate_models,
    fit_model,
    fit_multivariate,
    fit_univariate,
    forecast_differenced,
    forecast_one_step,
    parameter_dimension,
    run_fixed_grid,
)


def _ar_walk(rng, n, phi=0.4, level=100.0, scale=0.1):
    z = np.zeros(n)
    e = rng.normal(scale=scale, size=n)
    for t in range(1, n):
        z[t] = phi * z[t - 1] + e[t]
    return level + np.cumsum(z)


def test_grid_cardinality():
    specs = enumerate_models()
    assert len(specs) == 552
    assert sum(s.kind == "univariate" for s in specs) == 504
    assert sum(s.kind == "multivariate" for s in specs) == 48
    assert len(enumerate_models(windows=[96])) == 150
    assert specs == sorted(specs)
    assert all(s.on_grid for s in specs)


def test_group_features_and_dimension():
    assert ModelSpec(0, 12, 1, 1, 1).features == ()
    assert ModelSpec(3, 12, 1, 1, 1).features == (0, 1)
    assert ModelSpec(6, 12, 1, 1, 1).features == (2, 3)
    assert ModelSpec(7, 48, 1, 1, 0).kind == "multivariate"
    assert parameter_dimension(ModelSpec(7, 48, 1, 1, 1)) == 14
    assert parameter_dimension(ModelSpec(0, 12, 2, 1, 1)) == 5


def test_spec_check_rejects_bad_models():
    for spec in (ModelSpec(13, 48, 1, 1, 0), ModelSpec(0, 12, 1, 0, 0), ModelSpec(7, 48, 2, 1, 0)):
        with pytest.raises(ValidationError):
            spec.check()
    with pytest.raises(ValidationError):
        ModelSpec(0, 5, 2, 2, 2).check()
    assert not ModelSpec(0, 30, 1, 1, 0).on_grid


def test_random_walk_with_drift_closed_form(rng):
    spec = ModelSpec(0, 12, 0, 1, 0)
    for _ in range(20):
        y = 100.0 + np.cumsum(rng.normal(size=12))
        est = fit_univariate(spec, WindowData.from_arrays(y))
        assert est.fitted_forecast == pytest.approx(y[-1] + np.diff(y).mean(), abs=1e-10)
        assert forecast_one_step(est) == pytest.approx(est.fitted_forecast, abs=1e-10)


def test_closed_form_on_grid_origins(rng, series_factory):
    series = series_factory(_ar_walk(rng, 96), days=2)
    spec = ModelSpec(0, 12, 0, 1, 0)
    # origins whose window stays inside one session
    times = [t for t in range(len(series) - 1) if series.positions[t] >= 12]
    table = run_fixed_grid(series, [spec], times)
    y = series.y
    expected = [y[t] + np.diff(y[t - 11 : t + 1]).mean() for t in times]
    assert np.allclose(table.forecasts[0], expected, atol=1e-10, rtol=0)
    assert (table.status == "ok").all()


def test_session_dummy_absorbs_the_gap(rng):
    y = 100.0 + np.cumsum(rng.normal(scale=0.1, size=12))
    y[6:] += 5.0
    flags = np.zeros(12, dtype=bool)
    flags[6] = True
    est = fit_univariate(ModelSpec(0, 12, 0, 1, 0), WindowData.from_arrays(y, session_start=flags))
    z = np.diff(y)
    drift = np.delete(z, 5).mean()
    assert est.fitted_forecast == pytest.approx(y[-1] + drift, abs=1e-10)
    assert est.dummies.shape == (1,)
    assert est.dummies[0] == pytest.approx(z[5] - drift, abs=1e-10)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec(0, 48, 1, 1, 0),
        ModelSpec(0, 48, 2, 1, 1),
        ModelSpec(3, 48, 1, 2, 1),
        ModelSpec(6, 48, 2, 2, 2),
    ],
)
def test_level_and_differenced_forecasts_agree(rng, spec):
    y = _ar_walk(rng, 48)
    x = np.column_stack([rng.uniform(-1, 1, 48), rng.normal(size=48), rng.uniform(0, 1, (48, 2))])
    flags = np.zeros(48, dtype=bool)
    flags[20] = True
    est = fit_model(spec, WindowData.from_arrays(y, x, flags))
    assert est.converged
    direct = forecast_one_step(est)
    assert direct == pytest.approx(forecast_differenced(est), abs=1e-9)
    assert direct == pytest.approx(est.fitted_forecast, abs=1e-9)


def test_nested_models_do_not_lose_likelihood(rng):
    y = _ar_walk(rng, 96)
    window = WindowData.from_arrays(y)
    small = fit_univariate(ModelSpec(0, 96, 1, 1, 0), window)
    large = fit_univariate(ModelSpec(0, 96, 1, 1, 1), window)
    assert large.log_likelihood >= small.log_likelihood - 1e-6


def test_window_length_must_match(rng):
    y = _ar_walk(rng, 20)
    with pytest.raises(ValidationError):
        fit_univariate(ModelSpec(0, 12, 1, 1, 0), WindowData.from_arrays(y))
    with pytest.raises(ValidationError):
        fit_multivariate(ModelSpec(0, 20, 1, 1, 0), WindowData.from_arrays(y))
    with pytest.raises(ValidationError):
        WindowData.from_arrays(y, session_start=np.zeros(5, dtype=bool))


def test_missing_feature_is_rejected(rng):
    y = _ar_walk(rng, 24)
    x = rng.normal(size=(24, 4))
    x[10, 0] = np.nan
    with pytest.raises(ValidationError):
        fit_univariate(ModelSpec(1, 24, 1, 1, 0), WindowData.from_arrays(y, x))
    # group 0 does not read the features
    assert fit_univariate(ModelSpec(0, 24, 1, 1, 0), WindowData.from_arrays(y, x)).converged


def test_forecast_needs_a_converged_estimate(rng):
    est = fit_univariate(ModelSpec(0, 24, 1, 1, 0), WindowData.from_arrays(_ar_walk(rng, 24)))
    est.converged = False
    with pytest.raises(ValidationError):
        forecast_one_step(est)


def test_constant_channels_reduce_to_univariate(rng):
    y = _ar_walk(rng, 48, phi=0.5)
    window = WindowData.from_arrays(y)
    multi = fit_multivariate(ModelSpec(7, 48, 1, 1, 0), window)
    uni = fit_univariate(ModelSpec(0, 48, 1, 1, 0), window)
    assert multi.channels == ()
    assert multi.converged and uni.converged
    assert multi.ar[0, 0] == pytest.approx(uni.ar[0], abs=1e-3)
    assert multi.fitted_forecast == pytest.approx(uni.fitted_forecast, abs=1e-3)
    assert forecast_one_step(multi) == pytest.approx(multi.fitted_forecast, abs=1e-10)


def test_grid_origins_must_have_history(rng, series_factory):
    series = series_factory(_ar_walk(rng, 96), days=2)
    with pytest.raises(ValidationError):
        run_fixed_grid(series, [ModelSpec(0, 24, 0, 1, 0)], [10])
    with pytest.raises(ValidationError):
        # position 1 of the afternoon session is exempt
        run_fixed_grid(series, [ModelSpec(0, 12, 0, 1, 0)], [24])


@pytest.mark.timeout(120)
def test_grid_is_independent_of_worker_count(rng, series_factory):
    y = _ar_walk(rng, 96)
    features = np.column_stack([rng.uniform(-1, 1, 96), rng.normal(size=96), rng.uniform(0, 1, (96, 2))])
    series = series_factory(y, days=2, features=features)
    specs = [ModelSpec(0, 12, 1, 1, 0), ModelSpec(1, 12, 0, 1, 1), ModelSpec(0, 24, 0, 2, 0)]
    times = list(range(60, 72))
    serial = run_fixed_grid(series, specs, times, threads=1)
    pooled = run_fixed_grid(series, specs, times, threads=2)
    assert serial.specs == pooled.specs == sorted(specs)
    assert np.array_equal(serial.forecasts, pooled.forecasts, equal_nan=True)
    assert np.allclose(serial.errors, serial.realized[None, :] - serial.forecasts, equal_nan=True)

    back = ForecastTable.from_frame(serial.to_frame(), series)
    assert back.specs == serial.specs
    assert np.allclose(back.forecasts, serial.forecasts, equal_nan=True)
    assert np.allclose(back.realized, series.y[np.array(times) + 1])


def test_closed_form_on_all_origins_with_session_dummies(rng, series_factory):
    series = series_factory(_ar_walk(rng, 192), days=4)
    spec = ModelSpec(0, 12, 0, 1, 0)
    table = run_fixed_grid(series, [spec])
    y, flags = series.y, series.session_start
    expected = []
    for t in table.times:
        lo = t - 11
        z = np.diff(y[lo : t + 1])
        # a session opening at window position s > 0 absorbs the move z[s - 1]
        absorbed = [s - 1 for s in np.flatnonzero(flags[lo : t + 1]) if s > 0]
        expected.append(y[t] + np.delete(z, absorbed).mean())
    assert any(flags[t - 10 : t + 1].any() for t in table.times)
    assert np.allclose(table.forecasts[0], expected, atol=1e-10, rtol=0)


@pytest.mark.parametrize("group", [1, 2, 3, 4, 5, 6])
def test_zero_features_nest_group_zero(rng, group):
    y = _ar_walk(rng, 48)
    flags = np.zeros(48, dtype=bool)
    flags[30] = True
    window = WindowData.from_arrays(y, np.zeros((48, 4)), flags)
    base = fit_univariate(ModelSpec(0, 48, 1, 1, 1), window)
    nested = fit_univariate(ModelSpec(group, 48, 1, 1, 1), window)
    assert base.converged and nested.converged
    assert nested.fitted_forecast == pytest.approx(base.fitted_forecast, abs=1e-6)
    assert nested.log_likelihood == pytest.approx(base.log_likelihood, abs=1e-6)
    assert np.allclose(nested.beta, 0.0, atol=1e-6)


def test_grid_forecast_reads_only_its_window(rng, series_factory):
    y = _ar_walk(rng, 96)
    features = np.column_stack([rng.uniform(-1, 1, 96), rng.normal(size=96), rng.uniform(0, 1, (96, 2))])
    specs = [ModelSpec(0, 24, 1, 1, 0), ModelSpec(1, 24, 1, 1, 0)]
    t, w = 80, 24
    base = run_fixed_grid(series_factory(y, days=2, features=features), specs, [t])

    y_out, x_out = y.copy(), features.copy()
    y_out[t + 1 :] += rng.normal(size=y.size - t - 1)
    y_out[: t - w + 1] += 3.0
    x_out[t + 1 :] = rng.normal(size=(y.size - t - 1, 4))
    x_out[: t - w + 1] = 0.0
    outside = run_fixed_grid(series_factory(y_out, days=2, features=x_out), specs, [t])
    # only the realized price moves
    assert np.array_equal(outside.forecasts, base.forecasts)

    y_in = y.copy()
    y_in[t - w + 1] -= 0.5
    inside = run_fixed_grid(series_factory(y_in, days=2, features=features), specs, [t])
    assert not np.any(np.isclose(inside.forecasts, base.forecasts, atol=1e-9, rtol=0))


@pytest.mark.timeout(300)
def test_random_walk_forecast_error_matches_innovation_variance(rng, series_factory):
    sigma = 0.1
    n = 40 * 48
    series = series_factory(100.0 + np.cumsum(rng.normal(scale=sigma, size=n)), days=40)
    table = run_fixed_grid(series, [ModelSpec(0, 96, 0, 1, 0)])
    assert table.times.size > 1000
    mse = float(np.nanmean(table.errors**2))
    assert mse == pytest.approx(sigma**2, rel=0.15)
