"""
Synthetic TE-tunnel traffic: hourly series with a skewed daily oscillation, a
weaker weekly oscillation, linear trend, multiplicative jumps and partially
shared noise.

Waveforms (``t`` in hours, any real):

    daily:  R = (1 − asymmetry)·12, F = 24 − R,
            τ = (t − peak_hour + R) mod 24
            s(t) = −cos(π·τ/R)        for τ < R   (rise from −1 to +1)
                   cos(π·(τ − R)/F)   otherwise   (fall back to −1)
    weekly: w(t) = cos(2π·(t − weekly_peak_hour)/168)

Series value at step i (hour-of-week h = hours since Monday 00:00 UTC of
the timestamp):

    x_i = max(0, base·(1 + daily_amp·s(h) + weekly_amp·w(h)) + trend·i + noise_i)
          × Π{factor : jump hour ≤ i}
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from optiplan import OptiplanException
from optiplan.netmodel import tunnel_id
from optiplan.numcore import SeededRng
from optiplan.runner import JobRunner, SerialRunner
from optiplan.utils import TRAFFIC_SCHEMA, SchemaError, document_class, parse_timestamp

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24
HOURS_PER_WEEK = 168
# busiest hour of the day, GMT
PEAK_HOUR = 3.0
WEEKLY_PEAK_HOUR = 51.0
DEFAULT_START = '2024-01-01T00:00:00Z'
CSV_COLUMNS = ['timestamp', 'tunnel_id', 'value']
CSV_FLOAT_FORMAT = '%.6f'


class TraffgenException(OptiplanException):
    pass


def waveform_daily(t, asymmetry: float = 0.0, peak_hour: float = PEAK_HOUR):
    """Unit daily waveform in [−1, 1] peaking at `peak_hour`; accepts scalars or arrays."""
    if not 0 <= asymmetry < 1:
        raise ValueError('asymmetry must be in [0, 1)')
    rise = (1.0 - asymmetry) * HOURS_PER_DAY / 2
    fall = HOURS_PER_DAY - rise
    tau = np.mod(np.asarray(t, dtype=float) - peak_hour + rise, HOURS_PER_DAY)
    value = np.where(tau < rise, -np.cos(np.pi * tau / rise), np.cos(np.pi * (tau - rise) / fall))
    return value if value.ndim else float(value)


def waveform_weekly(t, peak_hour: float = WEEKLY_PEAK_HOUR):
    value = np.cos(2 * np.pi * (np.asarray(t, dtype=float) - peak_hour) / HOURS_PER_WEEK)
    return value if value.ndim else float(value)


@dataclass(frozen=True)
class TrafficProfile:
    base_level: float = 100.0
    daily_amp: float = 0.5
    weekly_amp: float = 0.1
    asymmetry: float = 0.0
    trend_per_hour: float = 0.0
    jump_schedule: Tuple[Tuple[int, float], ...] = ()
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.base_level <= 0:
            raise TraffgenException('base_level must be positive')
        if self.daily_amp < 0 or self.weekly_amp < 0 or self.noise_sd < 0:
            raise TraffgenException('amplitudes and noise_sd must be non-negative')
        if not 0 <= self.asymmetry < 1:
            raise TraffgenException('asymmetry must be in [0, 1)')
        object.__setattr__(self, 'jump_schedule',
                           tuple(sorted((int(h), float(f)) for h, f in self.jump_schedule)))

    def with_jump(self, hour: int, factor: float) -> TrafficProfile:
        return replace(self, jump_schedule=self.jump_schedule + ((hour, factor),))

    @classmethod
    def from_dict(cls, data: dict) -> TrafficProfile:
        data = dict(data)
        data['jump_schedule'] = tuple(tuple(j) for j in data.get('jump_schedule', ()))
        try:
            return cls(**data)
        except TypeError as err:
            raise SchemaError('Malformed traffic profile: %s' % err)


def _uniform(rng: SeededRng, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    return float(rng.uniform(1, low, high)[0]) if high > low else float(low)


@dataclass(frozen=True)
class ProfileRanges:
    """
    Per-tunnel profile sampler. `noise_frac` is noise_sd relative to the
    sampled base level; a tunnel gets one jump with `jump_probability`.
    """
    base_level: Tuple[float, float] = (10.0, 1000.0)
    daily_amp: Tuple[float, float] = (0.3, 0.6)
    weekly_amp: Tuple[float, float] = (0.05, 0.15)
    asymmetry: Tuple[float, float] = (0.0, 0.5)
    trend_per_hour: Tuple[float, float] = (0.0, 0.0)
    noise_frac: Tuple[float, float] = (0.01, 0.05)
    jump_probability: float = 0.0
    jump_factor: Tuple[float, float] = (0.7, 1.5)

    def sample(self, rng: SeededRng, n_hours: int) -> TrafficProfile:
        base = _uniform(rng, self.base_level)
        jumps = ()
        if self.jump_probability > 0 and rng.uniform(1)[0] < self.jump_probability:
            jumps = ((int(rng.integers(1, max(n_hours, 2))), _uniform(rng, self.jump_factor)),)
        return TrafficProfile(
            base_level=base,
            daily_amp=_uniform(rng, self.daily_amp),
            weekly_amp=_uniform(rng, self.weekly_amp),
            asymmetry=_uniform(rng, self.asymmetry),
            trend_per_hour=_uniform(rng, self.trend_per_hour),
            jump_schedule=jumps,
            noise_sd=base * _uniform(rng, self.noise_frac),
        )

    @classmethod
    def from_dict(cls, data: dict) -> ProfileRanges:
        try:
            return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
        except TypeError as err:
            raise SchemaError('Malformed profile ranges: %s' % err)


ProfileSource = Union[TrafficProfile, ProfileRanges, Callable[[SeededRng, int], TrafficProfile]]


@dataclass
class TimeSeries:
    start: pd.Timestamp
    values: np.ndarray

    def __post_init__(self):
        self.start = parse_timestamp(self.start)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) < 1:
            raise TraffgenException('Time series needs at least one value')
        if not np.all(np.isfinite(self.values)):
            raise TraffgenException('Time series values must be finite')

    def __len__(self):
        return len(self.values)

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=len(self.values), freq='h')

    @property
    def hours_of_day(self) -> np.ndarray:
        return np.asarray(self.timestamps.hour)

    def window(self, begin: int, end: int = None) -> TimeSeries:
        end = len(self.values) if end is None else end
        return TimeSeries(self.start + pd.Timedelta(hours=begin), self.values[begin:end])

    def timestamp_at(self, index: int) -> pd.Timestamp:
        return self.start + pd.Timedelta(hours=index)


def _hour_of_week(start: pd.Timestamp, n_hours: int) -> np.ndarray:
    offset = start.dayofweek * HOURS_PER_DAY + start.hour + start.minute / 60.0
    return offset + np.arange(n_hours, dtype=float)


def jump_factors(profile: TrafficProfile, n_hours: int) -> np.ndarray:
    factors = np.ones(n_hours)
    for hour, factor in profile.jump_schedule:
        if hour < n_hours:
            factors[max(hour, 0):] *= factor
    return factors


def generate_series(profile: TrafficProfile, n_hours: int, rng: SeededRng, start=DEFAULT_START,
                    shared_noise: np.ndarray = None, rho_shared: float = 0.0) -> TimeSeries:
    if n_hours < 1:
        raise ValueError('n_hours must be at least 1')
    if not 0 <= rho_shared <= 1:
        raise ValueError('rho_shared must be in [0, 1]')
    start = parse_timestamp(start)
    hours = _hour_of_week(start, n_hours)
    steps = np.arange(n_hours, dtype=float)
    level = profile.base_level * (1.0
                                  + profile.daily_amp * waveform_daily(hours, profile.asymmetry)
                                  + profile.weekly_amp * waveform_weekly(hours))
    noise = rng.normal(n_hours)
    if shared_noise is not None:
        noise = math.sqrt(rho_shared) * shared_noise[:n_hours] + math.sqrt(1.0 - rho_shared) * noise
    values = np.maximum(0.0, level + profile.trend_per_hour * steps + profile.noise_sd * noise)
    return TimeSeries(start, values * jump_factors(profile, n_hours))


def endpoint_names(n_endpoints: int) -> List[str]:
    width = len(str(n_endpoints))
    return ['N%0*d' % (width, i + 1) for i in range(n_endpoints)]


def _resolve_profile(source: ProfileSource, rng: SeededRng, n_hours: int) -> TrafficProfile:
    if isinstance(source, TrafficProfile):
        return source
    if isinstance(source, ProfileRanges):
        return source.sample(rng, n_hours)
    return source(rng, n_hours)


def generate_matrix_series(n_endpoints: int, n_classes: int, profiles: ProfileSource, rho_shared: float,
                           n_hours: int, rng: SeededRng, start=DEFAULT_START,
                           runner: JobRunner = None) -> Dict[str, TimeSeries]:
    """
    One series per (src, dst, class), keyed by tunnel id. Every tunnel draws
    from its own child generator, so the runner does not change the output.
    """
    if n_endpoints < 2 or n_classes < 1:
        raise ValueError('Need at least two endpoints and one class')
    names = endpoint_names(n_endpoints)
    keys = [tunnel_id(s, d, k) for s in names for d in names if s != d for k in range(n_classes)]
    shared = rng.spawn('shared').normal(n_hours)

    def job(item):
        index, key = item
        tunnel_rng = rng.spawn(index)
        profile = _resolve_profile(profiles, tunnel_rng.spawn('profile'), n_hours)
        return generate_series(profile, n_hours, tunnel_rng, start, shared, rho_shared)

    logger.debug('Generating %d tunnel series of %d hours', len(keys), n_hours)
    with (runner or SerialRunner()) as active:
        results = active.map(job, list(enumerate(keys)))
    return dict(zip(keys, results))


def conserving_shift(profile_from: TrafficProfile, profile_to: TrafficProfile, hour: int,
                     fraction: float) -> Tuple[TrafficProfile, TrafficProfile]:
    """
    Move `fraction` of the source tunnel's level onto a sibling tunnel from
    `hour` on. The total is conserved when both share the same waveform.
    """
    if not 0 < fraction < 1:
        raise ValueError('fraction must be in (0, 1)')
    gain = 1.0 + fraction * profile_from.base_level / profile_to.base_level
    return profile_from.with_jump(hour, 1.0 - fraction), profile_to.with_jump(hour, gain)


def total_traffic(series_map: Dict[str, TimeSeries]) -> TimeSeries:
    if not series_map:
        raise TraffgenException('No series to aggregate')
    series = list(series_map.values())
    first = series[0]
    for other in series[1:]:
        if other.start != first.start or len(other) != len(first):
            raise TraffgenException('Series are not aligned')
    return TimeSeries(first.start, np.sum([s.values for s in series], axis=0))


def write_series_csv(series_map: Dict[str, TimeSeries], path: Union[str, Path]):
    frames = [pd.DataFrame({'timestamp': s.timestamps.strftime('%Y-%m-%dT%H:%M:%SZ'),
                            'tunnel_id': key, 'value': s.values})
              for key, s in series_map.items()]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CSV_COLUMNS)
    frame.to_csv(path, index=False, columns=CSV_COLUMNS, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def read_series_csv(path: Union[str, Path]) -> Dict[str, TimeSeries]:
    try:
        frame = pd.read_csv(path, dtype={'tunnel_id': str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise SchemaError('Cannot parse %s: %s' % (path, err))
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise SchemaError('Missing column(s) %s in %s' % (', '.join(missing), path))
    try:
        frame['timestamp'] = pd.to_datetime(frame['timestamp'], utc=True)
        frame['value'] = frame['value'].astype(float)
    except (ValueError, TypeError) as err:
        raise SchemaError('Malformed series in %s: %s' % (path, err))
    result = {}
    for key, group in frame.groupby('tunnel_id', sort=False):
        group = group.sort_values('timestamp')
        steps = group['timestamp'].diff().dropna()
        if (steps != pd.Timedelta(hours=1)).any():
            raise SchemaError('Tunnel %s is not sampled hourly' % key)
        try:
            result[key] = TimeSeries(group['timestamp'].iloc[0], group['value'].to_numpy())
        except TraffgenException as err:
            raise SchemaError('Tunnel %s: %s' % (key, err))
    return result


@document_class(TRAFFIC_SCHEMA)
@dataclass(frozen=True)
class TrafficConfig:
    """Generation run: either one fixed `profile` for every tunnel or sampling `ranges`."""
    n_endpoints: int = 4
    n_classes: int = 1
    n_hours: int = 24 * 14
    rho_shared: float = 0.5
    start: str = DEFAULT_START
    profile: Optional[TrafficProfile] = None
    ranges: ProfileRanges = field(default_factory=ProfileRanges)

    @property
    def profile_source(self) -> ProfileSource:
        return self.profile if self.profile is not None else self.ranges

    @classmethod
    def from_document(cls, document: dict) -> TrafficConfig:
        known = {'n_endpoints', 'n_classes', 'n_hours', 'rho_shared', 'start'}
        kwargs = {k: v for k, v in document.items() if k in known}
        if document.get('profile') is not None:
            kwargs['profile'] = TrafficProfile.from_dict(document['profile'])
        if document.get('ranges') is not None:
            kwargs['ranges'] = ProfileRanges.from_dict(document['ranges'])
        try:
            config = cls(**kwargs)
        except TraffgenException as err:
            raise SchemaError(str(err))
        if config.n_endpoints < 2 or config.n_classes < 1 or config.n_hours < 1:
            raise SchemaError('Traffic config needs n_endpoints ≥ 2, n_classes ≥ 1, n_hours ≥ 1')
        return config

    def generate(self, rng: SeededRng, runner: JobRunner = None) -> Dict[str, TimeSeries]:
        return generate_matrix_series(self.n_endpoints, self.n_classes, self.profile_source, self.rho_shared,
                                      self.n_hours, rng, self.start, runner)
