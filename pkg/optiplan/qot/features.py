"""
Wavelength feature schema, span/path OSNR estimates and the synthetic QoT
dataset.

The synthetic labels follow a planted closed form:

    Q_dB = osnr_db − RATE_PENALTY_DB[data_rate] − 0.0015·path_length_km
           − 2.5·((frequency_thz − 193.7)/2.4)² + weak terms
    log10_ber = log10(Φ(−10^(Q_dB/20))) + N(0, 0.5²), clamped to [−15, −2]

where Φ is the standard normal CDF and the weak terms are small linear
contributions of margin, ORL, PMD, age and aux_1..aux_3.
"""
from __future__ import annotations
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import log_ndtr

from optiplan.numcore import SeededRng
from optiplan.qot import EmptyPath, QotException, SchemaMismatch
from optiplan.utils import SchemaError

logger = logging.getLogger(__name__)

# −10·log10(h·ν·B_ref) in dBm for a 0.1 nm reference bandwidth at 193.4 THz
OSNR_CONSTANT_DB = 58.0
C_BAND_THZ = (191.3, 196.1)
LABEL_RANGE = (-15.0, -2.0)
HIGH_BER_LOG10 = -6.0
RATE_PENALTY_DB = {40: 14.0, 100: 17.0}
LENGTH_PENALTY_DB_PER_KM = 0.0015
FREQUENCY_PENALTY_DB = 2.5
FREQUENCY_CENTER_THZ = 193.7
FREQUENCY_HALF_WIDTH_THZ = 2.4
LABEL_NOISE_SD = 0.5
DEFAULT_DATASET_SIZE = 2700
FIBER_LOSS_DB_PER_KM = (0.20, 0.22, 0.25)
LABEL_COLUMN = 'log10_ber'


@dataclass(frozen=True)
class WavelengthRecord:
    data_rate: int
    fiber_type: int
    frequency_thz: float
    path_length_km: float
    margin_db: float
    fiber_loss_db: float
    measurement_age_days: float
    n_amplifiers: int
    n_passthrough_roadms: int
    orl_db: float
    osnr_db: float
    pmd_ps: float
    aux_1: float = 0.0
    aux_2: float = 0.0
    aux_3: float = 0.0
    aux_4: float = 0.0
    aux_5: float = 0.0
    aux_6: float = 0.0
    aux_7: float = 0.0
    aux_8: float = 0.0
    aux_9: float = 0.0
    aux_10: float = 0.0
    aux_11: float = 0.0
    aux_12: float = 0.0
    aux_13: float = 0.0
    aux_14: float = 0.0

    def __post_init__(self):
        if self.data_rate not in RATE_PENALTY_DB:
            raise SchemaMismatch('data_rate', 'data_rate must be one of %s' % sorted(RATE_PENALTY_DB))
        if self.path_length_km <= 0:
            raise SchemaMismatch('path_length_km', 'path_length_km must be positive')
        if not C_BAND_THZ[0] <= self.frequency_thz <= C_BAND_THZ[1]:
            raise SchemaMismatch('frequency_thz', 'frequency %.3f THz is outside the C-band' % self.frequency_thz)
        for name in ('fiber_loss_db', 'measurement_age_days', 'pmd_ps'):
            if getattr(self, name) < 0:
                raise SchemaMismatch(name, '%s must be non-negative' % name)

    @classmethod
    def from_mapping(cls, data: Mapping) -> WavelengthRecord:
        values = {}
        for f in fields(cls):
            if f.name not in data:
                raise SchemaMismatch(f.name)
            try:
                values[f.name] = int(data[f.name]) if f.type in ('int', int) else float(data[f.name])
            except (TypeError, ValueError):
                raise SchemaMismatch(f.name)
        return cls(**values)

    def as_row(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(self)], columns=FEATURE_COLUMNS)


FEATURE_COLUMNS: List[str] = [f.name for f in fields(WavelengthRecord)]
PLANTED_DRIVERS = ('data_rate', 'path_length_km', 'osnr_db', 'frequency_thz')


def span_osnr(launch_power_dbm: float, span_loss_db: float, amp_noise_figure_db: float) -> float:
    if span_loss_db < 0:
        raise ValueError('span loss must be non-negative')
    return OSNR_CONSTANT_DB + launch_power_dbm - span_loss_db - amp_noise_figure_db


def combine_path_osnr(span_osnrs_db: Sequence[float]) -> float:
    """Noise powers add: total = −10·log10(Σ 10^(−osnr_i/10))."""
    values = np.asarray(span_osnrs_db, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyPath('Cannot combine an empty span list')
    if not np.all(np.isfinite(values)):
        raise QotException('Span OSNR values must be finite')
    return float(-10.0 * np.log10(np.sum(np.power(10.0, -values / 10.0))))


def section_osnrs(span_osnrs_db: Sequence[float], regen_after: Sequence[int]) -> List[float]:
    """
    OSNR of each regenerated section; `regen_after` holds the indexes of the
    spans after which the signal is regenerated. The worst section decides.
    """
    bounds = [0] + sorted(i + 1 for i in set(regen_after) if 0 <= i < len(span_osnrs_db) - 1) \
        + [len(span_osnrs_db)]
    return [combine_path_osnr(span_osnrs_db[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def planted_q_db(frame: pd.DataFrame) -> np.ndarray:
    rate = frame['data_rate'].map(RATE_PENALTY_DB).to_numpy(dtype=float)
    offset = (frame['frequency_thz'].to_numpy(dtype=float) - FREQUENCY_CENTER_THZ) / FREQUENCY_HALF_WIDTH_THZ
    weak = (0.05 * (frame['margin_db'].to_numpy(dtype=float) - 3.5)
            + 0.02 * (frame['orl_db'].to_numpy(dtype=float) - 32.0)
            - 0.05 * frame['pmd_ps'].to_numpy(dtype=float)
            - 0.0005 * frame['measurement_age_days'].to_numpy(dtype=float)
            + 0.10 * frame['aux_1'].to_numpy(dtype=float)
            - 0.08 * frame['aux_2'].to_numpy(dtype=float)
            + 0.05 * frame['aux_3'].to_numpy(dtype=float))
    return (frame['osnr_db'].to_numpy(dtype=float) - rate
            - LENGTH_PENALTY_DB_PER_KM * frame['path_length_km'].to_numpy(dtype=float)
            - FREQUENCY_PENALTY_DB * offset ** 2 + weak)


def planted_log10_ber(frame: pd.DataFrame, noise: np.ndarray = None) -> np.ndarray:
    """Noise-free planted label unless `noise` (in log10 units) is given."""
    q = np.power(10.0, planted_q_db(frame) / 20.0)
    label = log_ndtr(-q) / math.log(10.0)
    if noise is not None:
        label = label + noise
    return np.clip(label, *LABEL_RANGE)


@dataclass
class QotDataset:
    features: pd.DataFrame
    labels: np.ndarray
    provenance: str = 'synthetic'

    def __post_init__(self):
        missing = [c for c in FEATURE_COLUMNS if c not in self.features.columns]
        if missing:
            raise SchemaMismatch(missing[0])
        self.features = self.features[FEATURE_COLUMNS].reset_index(drop=True)
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(self.labels) != len(self.features):
            raise QotException('Dataset has %d records but %d labels' % (len(self.features), len(self.labels)))
        if not np.all(np.isfinite(self.labels)):
            raise QotException('Labels must be finite')

    def __len__(self):
        return len(self.labels)

    def subset(self, rows: Sequence[int]) -> QotDataset:
        return QotDataset(self.features.iloc[rows], self.labels[rows], self.provenance)

    def to_frame(self) -> pd.DataFrame:
        frame = self.features.copy()
        frame[LABEL_COLUMN] = self.labels
        return frame


def synth_qot_dataset(n: int = DEFAULT_DATASET_SIZE, rng: SeededRng = None, noise: bool = True) -> QotDataset:
    """
    Wavelengths over random multi-span paths. OSNR is derived from the
    spans, so it falls with path length; aux_14 is a constant spare slot.
    """
    if n < 10:
        raise ValueError('Need at least 10 records')
    rng = rng or SeededRng(0)
    gen = rng.generator
    n_spans = gen.integers(1, 26, size=n)
    fiber_type = gen.integers(0, len(FIBER_LOSS_DB_PER_KM), size=n)
    launch = gen.uniform(0.0, 2.0, size=n)
    lengths, losses, osnrs = np.zeros(n), np.zeros(n), np.zeros(n)
    for i in range(n):
        spans = gen.uniform(40.0, 100.0, size=n_spans[i])
        span_loss = np.maximum(0.0, FIBER_LOSS_DB_PER_KM[fiber_type[i]] * spans + gen.normal(0.0, 0.5, size=n_spans[i]))
        noise_figure = gen.uniform(4.5, 6.0, size=n_spans[i])
        lengths[i] = spans.sum()
        losses[i] = span_loss.max()
        osnrs[i] = combine_path_osnr([span_osnr(launch[i], l, nf) for l, nf in zip(span_loss, noise_figure)])
    frame = pd.DataFrame({
        'data_rate': gen.choice([40, 100], size=n, p=[0.4, 0.6]),
        'fiber_type': fiber_type,
        'frequency_thz': gen.uniform(*C_BAND_THZ, size=n),
        'path_length_km': lengths,
        'margin_db': gen.uniform(1.0, 6.0, size=n),
        'fiber_loss_db': losses,
        'measurement_age_days': gen.uniform(0.0, 365.0, size=n),
        'n_amplifiers': n_spans,
        'n_passthrough_roadms': gen.integers(0, n_spans // 3 + 1),
        'orl_db': gen.uniform(25.0, 40.0, size=n),
        'osnr_db': osnrs,
        'pmd_ps': gen.uniform(0.5, 5.0, size=n),
    })
    for index in range(1, 14):
        frame['aux_%d' % index] = gen.standard_normal(size=n)
    frame['aux_14'] = 0.0
    label_noise = gen.normal(0.0, LABEL_NOISE_SD, size=n) if noise else None
    return QotDataset(frame[FEATURE_COLUMNS], planted_log10_ber(frame, label_noise))


def write_dataset_csv(dataset: QotDataset, path: Union[str, Path]):
    dataset.to_frame().to_csv(path, index=False, float_format='%.10g', lineterminator='\n')


def read_records_csv(path: Union[str, Path], require_label: bool = True) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise SchemaError('Cannot parse %s: %s' % (path, err))
    for column in FEATURE_COLUMNS + ([LABEL_COLUMN] if require_label else []):
        if column not in frame.columns:
            raise SchemaMismatch(column)
        if not pd.api.types.is_numeric_dtype(frame[column]):
            raise SchemaMismatch(column, 'Column %r is not numeric' % column)
    return frame


def read_dataset_csv(path: Union[str, Path]) -> QotDataset:
    frame = read_records_csv(path)
    return QotDataset(frame[FEATURE_COLUMNS], frame[LABEL_COLUMN].to_numpy(dtype=float), provenance='imported')


def route_record(span_lengths_km: Sequence[float], regen_after: Sequence[int] = (), data_rate: int = 100,
                 frequency_thz: float = FREQUENCY_CENTER_THZ, fiber_type: int = 0, launch_power_dbm: float = 1.0,
                 noise_figure_db: float = 5.0, n_passthrough_roadms: int = 0, **extra) -> WavelengthRecord:
    """
    Feature record of a proposed wavelength over spans of the given lengths.
    With regenerators the worst section's OSNR is used.
    """
    if not len(span_lengths_km):
        raise EmptyPath('A wavelength needs at least one span')
    losses = [FIBER_LOSS_DB_PER_KM[fiber_type] * km for km in span_lengths_km]
    osnrs = [span_osnr(launch_power_dbm, loss, noise_figure_db) for loss in losses]
    values = dict(data_rate=data_rate, fiber_type=fiber_type, frequency_thz=frequency_thz,
                  path_length_km=float(sum(span_lengths_km)), margin_db=3.5, fiber_loss_db=max(losses),
                  measurement_age_days=0.0, n_amplifiers=len(span_lengths_km),
                  n_passthrough_roadms=n_passthrough_roadms, orl_db=32.0,
                  osnr_db=min(section_osnrs(osnrs, regen_after)), pmd_ps=1.0)
    values.update(extra)
    return WavelengthRecord(**values)


def records_frame(records: Sequence[Union[WavelengthRecord, Mapping]]) -> pd.DataFrame:
    rows: List[Dict] = []
    for record in records:
        rows.append(asdict(record) if isinstance(record, WavelengthRecord)
                    else asdict(WavelengthRecord.from_mapping(record)))
    return pd.DataFrame(rows, columns=FEATURE_COLUMNS)
