"""
Per-tunnel traffic forecasting.

A series is de-trended with an OLS line b + c·t, the lags whose partial
autocorrelation clears a horizon-dependent threshold become the features of
an autoregressive Gaussian-process model, and the trend is added back to
the posterior mean. One model is trained per (tunnel, horizon).
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from sklearn.linear_model import LinearRegression, Ridge
from sklearn.preprocessing import StandardScaler
from statsmodels.tsa.stattools import acovf, levinson_durbin

from optiplan import OptiplanException
from optiplan.netmodel import TrafficMatrix
from optiplan.numcore import DimensionMismatch, NotPositiveDefinite, as_matrix, cho_solve_factor, cholesky
from optiplan.runner import JobFailure, JobRunner, SerialRunner
from optiplan.traffgen import TimeSeries

logger = logging.getLogger(__name__)

THETA = 0.01
NOISE_VAR = 0.01
JITTER = 1e-10
CI_Z = 2.0
DEFAULT_MAX_LAG = 168
FALLBACK_LAG = 24
RIDGE_PENALTY = 1e-6
PEAK_HOURS = (1, 2, 3, 4)
VARIANCE_TOL = 1e-9
DEFAULT_HORIZONS = tuple(range(1, 97))


class ForecastException(OptiplanException):
    pass


class DegenerateSeries(ForecastException):
    pass


class InsufficientData(ForecastException):
    pass


class EmptyWindow(ForecastException):
    pass


class RankDeficient(ForecastException):
    pass


def _values(series: Union[TimeSeries, Sequence[float]]) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float).reshape(-1)


@dataclass(frozen=True)
class Trend:
    b: float
    c: float

    def at(self, t):
        return self.b + self.c * np.asarray(t, dtype=float)


def fit_trend(values: np.ndarray) -> Trend:
    if len(values) < 2:
        raise DegenerateSeries('Need at least two samples to fit a trend, got %d' % len(values))
    t = np.arange(len(values), dtype=float)
    design = np.column_stack([np.ones_like(t), t])
    (b, c), *_ = np.linalg.lstsq(design, values, rcond=None)
    return Trend(float(b), float(c))


def detrend(series: TimeSeries) -> Tuple[TimeSeries, float, float]:
    values = _values(series)
    trend = fit_trend(values)
    residual = values - trend.at(np.arange(len(values)))
    return TimeSeries(series.start, residual), trend.b, trend.c


@dataclass(frozen=True)
class PacfResult:
    values: np.ndarray
    n_samples: int

    @property
    def max_lag(self) -> int:
        return len(self.values) - 1


def pacf(series: Union[TimeSeries, Sequence[float]], max_lag: int) -> PacfResult:
    """
    Partial autocorrelations 0..max_lag from the Durbin–Levinson recursion
    over biased sample autocovariances (Yule–Walker estimates).
    """
    values = _values(series)
    if max_lag < 1 or len(values) <= max_lag + 1:
        raise InsufficientData('Need more than %d samples for PACF up to lag %d, got %d'
                               % (max_lag + 1, max_lag, len(values)))
    autocov = acovf(values, adjusted=False, demean=True, fft=True, nlag=max_lag)
    if autocov[0] <= np.finfo(float).tiny:
        result = np.zeros(max_lag + 1)
    else:
        _, _, result, _, _ = levinson_durbin(autocov, nlags=max_lag, isacov=True)
        result = np.clip(np.asarray(result, dtype=float), -1.0, 1.0)
    result[0] = 1.0
    return PacfResult(result, len(values))


def lag_threshold(horizon: int) -> float:
    return horizon ** (1.0 / 6.0) / 15.0


@dataclass(frozen=True)
class LagSet:
    lags: Tuple[int, ...]
    horizon: int

    def __post_init__(self):
        lags = tuple(int(l) for l in self.lags)
        object.__setattr__(self, 'lags', lags)
        if not lags:
            raise ForecastException('Lag set is empty')
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise ForecastException('Lags must be strictly increasing')
        if lags[0] < self.horizon:
            raise ForecastException('Lag %d is shorter than the horizon %d' % (lags[0], self.horizon))

    @property
    def max_lag(self) -> int:
        return self.lags[-1]


def select_lags(result: PacfResult, horizon: int, max_lag: int = None) -> LagSet:
    if horizon < 1:
        raise ValueError('horizon must be at least 1')
    max_lag = result.max_lag if max_lag is None else min(max_lag, result.max_lag)
    threshold = lag_threshold(horizon)
    lags = [t for t in range(horizon, max_lag + 1) if result.values[t] > threshold]
    if not lags:
        lags = [max(horizon, FALLBACK_LAG)]
        logger.debug('No lag clears %.4f at horizon %d, falling back to %s', threshold, horizon, lags)
    return LagSet(tuple(lags), horizon)


def build_design(residual: Union[TimeSeries, Sequence[float]], lag_set: LagSet) -> Tuple[np.ndarray, np.ndarray]:
    """Row r targets x[L + r] with features x[L + r − lag] for L = max lag."""
    values = _values(residual)
    n, top = len(values), lag_set.max_lag
    if n <= top:
        raise InsufficientData('Series of %d samples is too short for lag %d' % (n, top))
    targets = np.arange(top, n)
    x = np.column_stack([values[targets - lag] for lag in lag_set.lags])
    return x, values[targets]


def se_kernel(a: np.ndarray, b: np.ndarray, theta: float = THETA) -> np.ndarray:
    """K_ij = exp(−theta·‖a_i − b_j‖²)."""
    return np.exp(-theta * cdist(a, b, 'sqeuclidean'))


@dataclass(frozen=True)
class GprState:
    x_train: np.ndarray
    factor: np.ndarray
    alpha: np.ndarray
    theta: float = THETA
    noise_var: float = NOISE_VAR


def fit_gpr(x, y, theta: float = THETA, noise_var: float = NOISE_VAR) -> GprState:
    if theta <= 0 or noise_var <= 0:
        raise ValueError('theta and noise_var must be positive')
    x = as_matrix(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] < 1 or x.shape[0] != len(y):
        raise DimensionMismatch('Need matching non-empty inputs, got %s and %d targets' % (x.shape, len(y)))
    gram = se_kernel(x, x, theta) + noise_var * np.eye(len(y))
    try:
        factor = cholesky(gram)
    except NotPositiveDefinite:
        logger.warning('Kernel matrix not positive definite, retrying with jitter %g', JITTER)
        factor = cholesky(gram + JITTER * np.eye(len(y)))
    return GprState(x, factor, cho_solve_factor(factor, y), theta, noise_var)


def gpr_predict(state: GprState, x_query) -> Tuple[np.ndarray, np.ndarray]:
    x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
    if x_query.shape[1] != state.x_train.shape[1]:
        raise DimensionMismatch('Query has %d features, model has %d'
                                % (x_query.shape[1], state.x_train.shape[1]))
    k_star = se_kernel(state.x_train, x_query, state.theta)
    mean = k_star.T @ state.alpha
    w = linalg.solve_triangular(state.factor, k_star, lower=True)
    variance = 1.0 + state.noise_var - np.sum(w * w, axis=0)
    if variance.min() < -VARIANCE_TOL:
        logger.warning('Clamping negative posterior variance %g', variance.min())
    return mean, np.maximum(variance, 0.0)


@dataclass(frozen=True)
class Forecast:
    horizon: int
    target_index: int
    mean: float
    ci_half_width: float
    lags: Tuple[int, ...]

    def to_dict(self) -> dict:
        return {'mean': self.mean, 'ci_half_width': self.ci_half_width, 'lags': list(self.lags)}


class LaggedModel:
    """Shared feature plumbing of the GPR forecaster and the linear AR baseline."""
    trend: Trend
    lag_set: LagSet

    def features(self, values: np.ndarray, target_index: int) -> np.ndarray:
        indexes = np.array([target_index - lag for lag in self.lag_set.lags])
        if indexes.min() < 0 or indexes.max() >= len(values):
            raise InsufficientData('History does not cover the lags of target %d' % target_index)
        residual = values[indexes] - self.trend.at(indexes)
        return residual.reshape(1, -1)

    def predict_residual(self, features: np.ndarray) -> Tuple[float, float]:
        raise NotImplementedError

    def predict_at(self, values: Union[TimeSeries, Sequence[float]], target_index: int) -> Forecast:
        """
        Forecast sample `target_index` from the history `values`, indexed
        from the start of the training window.
        """
        values = _values(values)
        mean, half_width = self.predict_residual(self.features(values, target_index))
        return Forecast(self.lag_set.horizon, target_index, float(mean + self.trend.at(target_index)),
                        float(half_width), self.lag_set.lags)


@dataclass
class ForecastModel(LaggedModel):
    trend: Trend
    lag_set: LagSet
    gpr: GprState
    scaler: StandardScaler
    y_scale: float

    @classmethod
    def fit(cls, series: Union[TimeSeries, Sequence[float]], horizon: int, max_lag: int = DEFAULT_MAX_LAG,
            theta: float = THETA, noise_var: float = NOISE_VAR) -> ForecastModel:
        values = _values(series)
        trend = fit_trend(values)
        residual = values - trend.at(np.arange(len(values)))
        lag_set = select_lags(pacf(residual, min(max_lag, len(values) - 2)), horizon, max_lag)
        x, y = build_design(residual, lag_set)
        scaler = StandardScaler().fit(x)
        y_scale = float(np.std(y))
        if y_scale <= np.finfo(float).eps * max(1.0, float(np.abs(y).max())):
            y_scale = 1.0
        gpr = fit_gpr(scaler.transform(x), y / y_scale, theta, noise_var)
        logger.debug('Fitted horizon %d on %d rows with lags %s', horizon, len(y), lag_set.lags)
        return cls(trend, lag_set, gpr, scaler, y_scale)

    def predict_residual(self, features):
        mean, variance = gpr_predict(self.gpr, self.scaler.transform(features))
        return mean[0] * self.y_scale, CI_Z * np.sqrt(variance[0]) * self.y_scale


@dataclass
class ArModel(LaggedModel):
    trend: Trend
    lag_set: LagSet
    coefficients: np.ndarray
    residual_sd: float

    def predict_residual(self, features):
        return float(features[0] @ self.coefficients), CI_Z * self.residual_sd


def fit_ar_baseline(series: Union[TimeSeries, Sequence[float]], lag_set: LagSet) -> ArModel:
    values = _values(series)
    trend = fit_trend(values)
    x, y = build_design(values - trend.at(np.arange(len(values))), lag_set)
    try:
        model = LinearRegression(fit_intercept=False).fit(x, y)
        if model.rank_ < x.shape[1]:
            raise RankDeficient('Design of rank %d for %d lags' % (model.rank_, x.shape[1]))
    except RankDeficient as err:
        logger.warning('%s, falling back to ridge %g', err, RIDGE_PENALTY)
        model = Ridge(alpha=RIDGE_PENALTY, fit_intercept=False).fit(x, y)
    residual_sd = float(np.std(y - model.predict(x)))
    return ArModel(trend, lag_set, np.asarray(model.coef_, dtype=float), residual_sd)


def _apply_shifts(result: Forecast, last_index: int, known_shifts: Iterable[Tuple[int, float]]) -> Forecast:
    factor = 1.0
    for hour, shift in known_shifts:
        if last_index < hour <= result.target_index:
            factor *= shift
    if factor == 1.0:
        return result
    return Forecast(result.horizon, result.target_index, result.mean * factor,
                    result.ci_half_width * abs(factor), result.lags)


def forecast(series: Union[TimeSeries, Sequence[float]], horizon: int, max_lag: int = DEFAULT_MAX_LAG,
             known_shifts: Iterable[Tuple[int, float]] = (), theta: float = THETA,
             noise_var: float = NOISE_VAR) -> Forecast:
    """
    Forecast `horizon` hours past the last sample. `known_shifts` are
    scheduled (hour index, factor) level changes, e.g. from a planned IP
    topology change, applied when they fall inside the horizon.
    """
    values = _values(series)
    model = ForecastModel.fit(values, horizon, max_lag, theta, noise_var)
    last = len(values) - 1
    return _apply_shifts(model.predict_at(values, last + horizon), last, known_shifts)


@dataclass
class Trajectory:
    forecasts: Dict[int, Forecast] = field(default_factory=dict)
    failures: Dict[int, str] = field(default_factory=dict)

    @property
    def horizons(self) -> List[int]:
        return sorted(self.forecasts)

    def means(self) -> np.ndarray:
        return np.array([self.forecasts[h].mean for h in self.horizons])


def forecast_trajectory(series: Union[TimeSeries, Sequence[float]], horizons: Iterable[int] = DEFAULT_HORIZONS,
                        max_lag: int = DEFAULT_MAX_LAG, runner: JobRunner = None) -> Trajectory:
    """One independently trained model per horizon; failed horizons are recorded, not raised."""
    values = _values(series)
    horizons = list(horizons)
    with (runner or SerialRunner()) as active:
        results = active.run(lambda h: forecast(values, h, max_lag), horizons)
    trajectory = Trajectory()
    for horizon, result in zip(horizons, results):
        if isinstance(result, JobFailure):
            logger.warning('Horizon %d failed: %s', horizon, result.error)
            trajectory.failures[horizon] = str(result.error)
        else:
            trajectory.forecasts[horizon] = result
    return trajectory


@dataclass(frozen=True)
class ForecastEval:
    mae_overall: float
    mae_peak: Optional[float]
    per_horizon: Dict[int, float] = field(default_factory=dict)
    n_points: int = 0


def relative_errors(predictions, actuals) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if predictions.shape != actuals.shape:
        raise DimensionMismatch('Predictions and actuals are not aligned')
    if np.any(actuals <= 0):
        raise ForecastException('Relative errors need positive actuals')
    return np.abs(predictions - actuals) / actuals


def evaluate(predictions, actuals, timestamps, horizons: Sequence[int] = None,
             peak_hours: Sequence[int] = PEAK_HOURS) -> ForecastEval:
    """
    Median relative absolute error over all points and over the GMT peak
    window; `horizons`, aligned with the points, adds a per-horizon breakdown.
    The peak error is None when no point falls in the window.
    """
    errors = relative_errors(predictions, actuals)
    if errors.size == 0:
        raise EmptyWindow('No test points to evaluate')
    hours = np.array([ts.hour for ts in timestamps])
    if hours.shape != errors.shape:
        raise DimensionMismatch('Timestamps are not aligned with predictions')
    peak = np.isin(hours, peak_hours)
    per_horizon = {}
    if horizons is not None:
        horizons = np.asarray(horizons)
        per_horizon = {int(h): float(np.median(errors[horizons == h])) for h in np.unique(horizons)}
    mae_peak = float(np.median(errors[peak])) if peak.any() else None
    return ForecastEval(float(np.median(errors)), mae_peak, per_horizon, int(errors.size))


@dataclass
class Backtest:
    evaluation: ForecastEval
    predictions: np.ndarray
    actuals: np.ndarray
    timestamps: List


def backtest(series: TimeSeries, horizon: int, train_hours: int, max_lag: int = DEFAULT_MAX_LAG,
             baseline: bool = False) -> Backtest:
    """
    Train once on the first `train_hours` samples and score every later
    sample that lies at least `horizon` hours after the end of training.
    """
    if not 0 < train_hours < len(series):
        raise InsufficientData('Training window of %d hours does not fit %d samples' % (train_hours, len(series)))
    train = series.values[:train_hours]
    model = ForecastModel.fit(train, horizon, max_lag)
    if baseline:
        model = fit_ar_baseline(train, model.lag_set)
    targets = range(train_hours - 1 + horizon, len(series))
    if not targets:
        raise EmptyWindow('No test samples after a %d hour gap' % horizon)
    predictions = np.array([model.predict_at(series.values, t).mean for t in targets])
    actuals = series.values[list(targets)]
    timestamps = [series.timestamp_at(t) for t in targets]
    return Backtest(evaluate(predictions, actuals, timestamps), predictions, actuals, timestamps)


def surge_from_forecasts(series_map: Dict[str, TimeSeries], horizons: Iterable[int],
                         max_lag: int = DEFAULT_MAX_LAG, runner: JobRunner = None) -> TrafficMatrix:
    """
    Surge traffic matrix: per tunnel, the largest forecast mean plus credible
    half-width over `horizons`. Keys are tunnel ids `src:dst:class`.
    """
    horizons = list(horizons)
    keys = sorted(series_map)

    with (runner or SerialRunner()) as active:
        peaks = active.map(lambda key: _peak_demand(series_map[key], horizons, max_lag), keys)
    entries, endpoints, classes = {}, set(), set()
    for key, demand in zip(keys, peaks):
        src, dst, cls = key.rsplit(':', 2)
        entries[(src, dst, int(cls))] = demand
        endpoints.update((src, dst))
        classes.add(int(cls))
    return TrafficMatrix(tuple(sorted(endpoints)), max(classes) + 1, entries)


def _peak_demand(series: TimeSeries, horizons: Sequence[int], max_lag: int) -> float:
    peaks = []
    for horizon in horizons:
        result = forecast(series, horizon, max_lag)
        peaks.append(result.mean + result.ci_half_width)
    return max(0.0, max(peaks))
