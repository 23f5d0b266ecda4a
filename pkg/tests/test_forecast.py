import numpy as np
import pandas as pd
import pytest

from optiplan.forecast import (FALLBACK_LAG, EmptyWindow, ForecastException, InsufficientData, LagSet, PacfResult,
                               backtest, build_design, detrend, evaluate, fit_ar_baseline, fit_gpr, fit_trend, forecast,
                               forecast_trajectory, gpr_predict, lag_threshold, pacf, relative_errors, se_kernel,
                               select_lags, surge_from_forecasts)
from optiplan.numcore import SeededRng
from optiplan.runner import ThreadRunner
from optiplan.traffgen import TimeSeries, TrafficProfile, generate_series


def ar1(phi, n, seed):
    noise = SeededRng(seed).normal(n + 200)
    values = np.zeros(n + 200)
    for t in range(1, len(values)):
        values[t] = phi * values[t - 1] + noise[t]
    return values[200:]


def test_fit_trend():
    trend = fit_trend(np.full(20, 3.0))
    assert trend.b == pytest.approx(3.0)
    assert trend.c == pytest.approx(0.0, abs=1e-12)
    assert fit_trend(2.0 * np.arange(50)).c == pytest.approx(2.0, abs=1e-12)
    t = np.arange(500)
    assert 0.45 <= fit_trend(np.sin(2 * np.pi * t / 24) + 0.5 * t).c <= 0.55


def test_detrend():
    series = TimeSeries('2024-01-01', 4.0 + 0.5 * np.arange(48) + np.tile([1.0, -1.0], 24))
    residual, b, c = detrend(series)
    # the alternating term tilts the fit by -24 / 9212 per hour
    assert (b, c) == (pytest.approx(4.06122, abs=1e-4), pytest.approx(0.5 - 24 / 9212))
    assert residual.start == series.start
    assert abs(residual.values.mean()) < 1e-9


def test_pacf_lag_zero_and_white_noise():
    n, max_lag = 2000, 60
    outside = 0
    for seed in range(100):
        result = pacf(SeededRng(seed).normal(n), max_lag)
        assert result.values[0] == 1.0
        outside += int(np.sum(np.abs(result.values[1:]) > 3 / np.sqrt(n)))
    assert outside <= 0.01 * 100 * max_lag


def test_pacf_ar1():
    result = pacf(ar1(0.8, 5000, 1), 10)
    assert 0.77 <= result.values[1] <= 0.83
    assert abs(result.values[2]) < 0.05


def test_pacf_needs_samples():
    with pytest.raises(InsufficientData):
        pacf(np.arange(10.0), 9)


@pytest.mark.parametrize('horizon, expected', [(1, 1 / 15), (168, 0.1566)])
def test_lag_threshold(horizon, expected):
    assert lag_threshold(horizon) == pytest.approx(expected, abs=1e-4)


def test_select_lags_fallback():
    result = PacfResult(np.r_[1.0, np.full(60, 0.01)], 1000)
    assert select_lags(result, 6).lags == (FALLBACK_LAG,)
    assert select_lags(result, 30).lags == (30,)


def test_select_lags_threshold_and_horizon():
    values = np.r_[1.0, np.zeros(48)]
    values[[1, 2, 24, 48]] = [0.9, 0.1, 0.5, 0.12]
    result = PacfResult(values, 1000)
    assert select_lags(result, 1).lags == (1, 2, 24, 48)
    assert select_lags(result, 3).lags == (24, 48)
    assert select_lags(result, 30).lags == (48,)


def test_select_lags_shrink_with_horizon():
    result = pacf(generate_series(TrafficProfile(noise_sd=3.0), 24 * 60, SeededRng(3)), 168)
    counts = [len(select_lags(result, h).lags) for h in (1, 6, 24, 96, 168)]
    assert counts == sorted(counts, reverse=True)


def test_lag_set_rules():
    with pytest.raises(ForecastException):
        LagSet((), 1)
    with pytest.raises(ForecastException):
        LagSet((2, 1), 1)
    with pytest.raises(ForecastException):
        LagSet((3, 24), 6)


def test_build_design_alignment():
    values = np.arange(10.0)
    x, y = build_design(values, LagSet((1,), 1))
    assert x.shape == (9, 1)
    x, y = build_design(values, LagSet((1, 2), 1))
    assert x.shape == (8, 2)
    assert y[0] == 2.0 and list(x[0]) == [1.0, 0.0]
    values = np.arange(200.0)
    x, y = build_design(values, LagSet((24,), 24))
    assert x.shape == (176, 1)
    assert y[10] == 34.0 and x[10, 0] == 10.0


def test_gpr_single_point():
    state = fit_gpr([[0.3, -1.0]], [2.0])
    mean, variance = gpr_predict(state, [[0.3, -1.0]])
    assert mean[0] == pytest.approx(2.0 / 1.01)
    assert mean[0] == pytest.approx(0.99010 * 2.0, rel=1e-5)
    assert variance[0] >= 0.0


def test_gpr_far_query_reverts_to_zero():
    state = fit_gpr([[0.0], [1.0]], [5.0, 4.0])
    mean, _ = gpr_predict(state, [[1000.0]])
    assert abs(mean[0]) < 1e-12


def test_gpr_matches_explicit_inverse():
    rng = SeededRng(8)
    x = rng.normal(10).reshape(5, 2) * 5
    y = rng.normal(5)
    query = rng.normal(6).reshape(3, 2) * 5
    kernel = se_kernel(x, x) + 0.01 * np.eye(5)
    expected = se_kernel(query, x) @ np.linalg.inv(kernel) @ y
    mean, _ = gpr_predict(fit_gpr(x, y), query)
    assert np.allclose(mean, expected, atol=1e-8)


def test_gpr_interpolates_with_tiny_noise():
    x = np.array([[0.0], [10.0], [20.0]])
    y = np.array([1.0, -2.0, 0.5])
    mean, _ = gpr_predict(fit_gpr(x, y, noise_var=1e-8), x)
    assert np.allclose(mean, y, atol=1e-3)


def test_forecast_constant_series():
    result = forecast(np.full(300, 7.0), 24, max_lag=48)
    assert result.mean == pytest.approx(7.0, abs=1e-6)
    assert result.target_index == 323


def test_forecast_linear_series():
    values = 5.0 + 0.25 * np.arange(300)
    result = forecast(values, 12, max_lag=48)
    assert result.mean == pytest.approx(5.0 + 0.25 * (299 + 12), abs=1e-6)


def test_forecast_known_shift():
    values = np.full(300, 7.0)
    shifted = forecast(values, 24, max_lag=48, known_shifts=[(310, 2.0)])
    assert shifted.mean == pytest.approx(14.0, abs=1e-5)
    outside = forecast(values, 24, max_lag=48, known_shifts=[(400, 2.0)])
    assert outside.mean == pytest.approx(7.0, abs=1e-6)


def test_trajectory_constant_series():
    trajectory = forecast_trajectory(np.full(300, 7.0), range(1, 97), max_lag=48)
    assert trajectory.horizons == list(range(1, 97))
    assert np.allclose(trajectory.means(), 7.0, atol=1e-6)
    assert not trajectory.failures


def test_trajectory_matches_single_forecast():
    series = generate_series(TrafficProfile(noise_sd=2.0), 24 * 21, SeededRng(5))
    single = forecast(series, 24, max_lag=72)
    trajectory = forecast_trajectory(series, [24], max_lag=72)
    assert trajectory.horizons == [24]
    assert trajectory.forecasts[24].mean == pytest.approx(single.mean)


def test_trajectory_records_failures():
    trajectory = forecast_trajectory(np.full(30, 1.0), [1, 40], max_lag=20)
    assert trajectory.horizons == [1]
    assert 40 in trajectory.failures


def test_trajectory_runner_independent():
    series = generate_series(TrafficProfile(noise_sd=2.0), 24 * 14, SeededRng(6))
    serial = forecast_trajectory(series, [1, 6, 24], max_lag=48)
    threaded = forecast_trajectory(series, [1, 6, 24], max_lag=48, runner=ThreadRunner(3))
    assert np.array_equal(serial.means(), threaded.means())


def test_ar_baseline_recovers_coefficient():
    model = fit_ar_baseline(ar1(0.7, 5000, 2), LagSet((1,), 1))
    assert 0.65 <= model.coefficients[0] <= 0.75


def test_ar_baseline_white_noise():
    model = fit_ar_baseline(SeededRng(4).normal(5000), LagSet((1, 2, 3), 1))
    assert np.all(np.abs(model.coefficients) < 0.05)


def test_relative_errors():
    actual = np.array([10.0, 20.0, 40.0])
    assert np.array_equal(relative_errors(actual, actual), np.zeros(3))
    assert relative_errors(1.1 * actual, actual) == pytest.approx([0.1] * 3)
    with pytest.raises(ForecastException):
        relative_errors([1.0], [0.0])


def test_evaluate():
    timestamps = list(pd.date_range('2024-01-01', periods=5, freq='h', tz='UTC'))
    actual = np.array([10.0, 10.0, 10.0, 10.0, 10.0])
    predicted = np.array([11.0, 13.0, 10.0, 8.0, 10.5])
    scores = evaluate(predicted, actual, timestamps, horizons=[1, 1, 2, 2, 2])
    # errors 0.1, 0.3, 0, 0.2, 0.05; hours 1-4 are the peak window
    assert scores.mae_overall == pytest.approx(0.1)
    assert scores.mae_peak == pytest.approx(0.125)
    assert scores.per_horizon == {1: pytest.approx(0.2), 2: pytest.approx(0.05)}
    scores = evaluate(1.1 * actual, actual, timestamps)
    assert (scores.mae_overall, scores.mae_peak) == (pytest.approx(0.1), pytest.approx(0.1))


def test_evaluate_without_peak_points():
    timestamps = list(pd.date_range('2024-01-01 10:00', periods=3, freq='h', tz='UTC'))
    scores = evaluate([1.1, 1.0, 1.0], [1.0, 1.0, 1.0], timestamps)
    assert scores.mae_overall == 0.0
    assert scores.mae_peak is None
    with pytest.raises(EmptyWindow):
        evaluate([], [], [])


def test_surge_from_forecasts():
    series = {'A:B:0': TimeSeries('2024-01-01', np.full(200, 10.0)),
              'B:A:0': TimeSeries('2024-01-01', np.full(200, 30.0))}
    matrix = surge_from_forecasts(series, [1, 6], max_lag=48)
    assert matrix.endpoints == ('A', 'B')
    assert 10.0 - 1e-6 <= matrix.entries[('A', 'B', 0)] < 11.0
    assert 30.0 - 1e-6 <= matrix.entries[('B', 'A', 0)] < 31.0


@pytest.mark.slow
def test_forecast_quality_on_daily_traffic():
    profile = TrafficProfile(base_level=100.0, daily_amp=0.5, weekly_amp=0.1, asymmetry=0.3, noise_sd=0.5)
    n_train = 24 * 90
    series = generate_series(profile, n_train + 24, SeededRng(11))
    result = forecast(series.values[:n_train], 24)
    actual = series.values[n_train - 1 + 24]
    assert abs(result.mean - actual) / actual < 0.05


@pytest.mark.slow
def test_backtest_quality():
    profile = TrafficProfile(base_level=100.0, daily_amp=0.5, weekly_amp=0.1, noise_sd=0.5)
    series = generate_series(profile, 24 * 60 + 96, SeededRng(12))
    result = backtest(series, 1, 24 * 60)
    assert result.evaluation.mae_overall < 0.05
    assert len(result.predictions) == 96


@pytest.mark.slow
def test_forecast_quality_across_seeds():
    # three months of training, noise at 3% of the base level
    profile = TrafficProfile(base_level=100.0, daily_amp=0.5, weekly_amp=0.1, noise_sd=3.0)
    n_train = 24 * 90
    accurate = beats_baseline = 0
    for seed in range(20):
        series = generate_series(profile, n_train + 24 * 7, SeededRng(100 + seed))
        gpr = backtest(series, 24, n_train).evaluation
        baseline = backtest(series, 24, n_train, baseline=True).evaluation
        accurate += gpr.mae_overall < 0.05 and gpr.mae_peak < 0.05
        beats_baseline += gpr.mae_overall < baseline.mae_overall
    assert accurate >= 18
    assert beats_baseline >= 16
