import numpy as np
import pytest

from optiplan.numcore import SeededRng
from optiplan.runner import ThreadRunner
from optiplan.traffgen import (ProfileRanges, TimeSeries, TraffgenException, TrafficConfig, TrafficProfile,
                               conserving_shift, generate_matrix_series, generate_series, read_series_csv,
                               total_traffic, waveform_daily, waveform_weekly, write_series_csv)
from optiplan.utils import TRAFFIC_SCHEMA, SchemaError, translate_to_object

FLAT = TrafficProfile(base_level=10.0, daily_amp=0.0, weekly_amp=0.0)


def autocorrelation(values, lag):
    return float(np.corrcoef(values[:-lag], values[lag:])[0, 1])


def test_waveforms():
    assert waveform_daily(3.0) == pytest.approx(1.0)
    assert waveform_daily(15.0) == pytest.approx(-1.0)
    assert waveform_daily(3.0, asymmetry=0.5) == pytest.approx(1.0)
    # rise lasts 6 h with asymmetry 0.5
    assert waveform_daily(-3.0, asymmetry=0.5) == pytest.approx(-1.0)
    assert waveform_weekly(51.0) == pytest.approx(1.0)
    t = np.arange(0, 48, 0.5)
    assert np.all(np.abs(waveform_daily(t, 0.3)) <= 1.0 + 1e-12)
    assert np.allclose(waveform_daily(t), waveform_daily(t + 24))


def test_constant_series():
    series = generate_series(FLAT, 48, SeededRng(1))
    assert np.array_equal(series.values, np.full(48, 10.0))


def test_series_is_deterministic():
    profile = TrafficProfile(noise_sd=5.0, trend_per_hour=0.1)
    first = generate_series(profile, 200, SeededRng(42))
    second = generate_series(profile, 200, SeededRng(42))
    assert np.array_equal(first.values, second.values)


def test_daily_extremes():
    profile = TrafficProfile(base_level=100.0, daily_amp=0.5, weekly_amp=0.0)
    series = generate_series(profile, 168, SeededRng(0))
    assert series.values.max() == pytest.approx(150.0, abs=1.0)
    assert series.values.min() == pytest.approx(50.0, abs=1.0)


def test_jump_is_exact():
    series = generate_series(FLAT.with_jump(5, 2.0).with_jump(8, 0.5), 12, SeededRng(0))
    assert list(series.values) == [10.0] * 5 + [20.0] * 3 + [10.0] * 4


def test_values_are_non_negative():
    profile = TrafficProfile(base_level=1.0, daily_amp=0.9, weekly_amp=0.1, noise_sd=5.0)
    for seed in range(5):
        assert generate_series(profile, 300, SeededRng(seed)).values.min() >= 0.0


def test_conserving_shift_keeps_total():
    source = TrafficProfile(base_level=100.0, daily_amp=0.0, weekly_amp=0.0)
    sibling = TrafficProfile(base_level=50.0, daily_amp=0.0, weekly_amp=0.0)
    moved_from, moved_to = conserving_shift(source, sibling, 10, 0.4)
    a = generate_series(moved_from, 24, SeededRng(0)).values
    b = generate_series(moved_to, 24, SeededRng(0)).values
    assert np.allclose(a + b, 150.0)
    assert a[-1] == pytest.approx(60.0)


def test_profile_validation():
    with pytest.raises(TraffgenException):
        TrafficProfile(base_level=0.0)
    with pytest.raises(TraffgenException):
        TrafficProfile(asymmetry=1.0)
    with pytest.raises(ValueError):
        generate_series(FLAT, 0, SeededRng(0))


@pytest.mark.parametrize('n, k, expected', [(2, 1, 2), (3, 2, 12)])
def test_matrix_series_count(n, k, expected):
    series = generate_matrix_series(n, k, FLAT, 0.5, 4, SeededRng(0))
    assert len(series) == expected
    assert all(np.array_equal(s.values, np.full(4, 10.0)) for s in series.values())


def test_matrix_series_fifty_endpoints():
    assert len(generate_matrix_series(50, 2, FLAT, 0.0, 2, SeededRng(0))) == 4900


def test_shared_noise_correlation():
    profile = TrafficProfile(noise_sd=10.0)
    series = list(generate_matrix_series(3, 1, profile, 1.0, 500, SeededRng(4)).values())
    for a, b in zip(series, series[1:]):
        assert np.corrcoef(a.values, b.values)[0, 1] >= 0.99


def test_matrix_series_runner_independent():
    ranges = ProfileRanges(jump_probability=0.5)
    serial = generate_matrix_series(4, 1, ranges, 0.3, 48, SeededRng(9))
    threaded = generate_matrix_series(4, 1, ranges, 0.3, 48, SeededRng(9), runner=ThreadRunner(3))
    assert serial.keys() == threaded.keys()
    for key in serial:
        assert np.array_equal(serial[key].values, threaded[key].values)


def test_total_traffic_periodicity():
    series = generate_matrix_series(4, 1, ProfileRanges(), 0.5, 168 * 4, SeededRng(2))
    total = total_traffic(series).values
    assert autocorrelation(total, 24) > autocorrelation(total, 13)
    assert autocorrelation(total, 168) > autocorrelation(total, 13)


def test_csv_round_trip(tmp_path):
    path = tmp_path / 'series.csv'
    series = generate_matrix_series(3, 1, TrafficProfile(noise_sd=2.0), 0.5, 30, SeededRng(3))
    write_series_csv(series, path)
    assert path.read_text().splitlines()[0] == 'timestamp,tunnel_id,value'
    assert len(path.read_text().splitlines()) == 1 + 6 * 30
    loaded = read_series_csv(path)
    assert loaded.keys() == series.keys()
    for key in series:
        assert loaded[key].start == series[key].start
        assert np.allclose(loaded[key].values, series[key].values, atol=1e-6)


def test_csv_gap_is_rejected(tmp_path):
    path = tmp_path / 'gap.csv'
    path.write_text('timestamp,tunnel_id,value\n'
                    '2024-01-01T00:00:00Z,a,1.0\n'
                    '2024-01-01T02:00:00Z,a,2.0\n')
    with pytest.raises(SchemaError):
        read_series_csv(path)


def test_time_series_window():
    series = TimeSeries('2024-01-01T00:00:00Z', np.arange(10.0))
    window = series.window(4, 6)
    assert list(window.values) == [4.0, 5.0]
    assert window.start.hour == 4
    assert series.timestamp_at(25).day == 2


def test_traffic_config_document():
    config = translate_to_object({'schema': TRAFFIC_SCHEMA, 'n_endpoints': 3, 'n_hours': 5,
                                  'profile': {'base_level': 20.0, 'daily_amp': 0.0, 'weekly_amp': 0.0}})
    assert isinstance(config, TrafficConfig)
    series = config.generate(SeededRng(0))
    assert len(series) == 6
    assert all(np.array_equal(s.values, np.full(5, 20.0)) for s in series.values())
    with pytest.raises(SchemaError):
        translate_to_object({'schema': TRAFFIC_SCHEMA, 'n_endpoints': 1})
