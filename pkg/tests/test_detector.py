import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fortune.detector import (
    DetectorConfig, ErrorStream, alarm_intervals, auto_tau_grid, detection_latency, first_alarm,
    flag_stream, parse_d_grid, parse_tau_grid, prediction_error, sweep, window_score,
)


def brute_flags(e, tau, D):
    """Flag t when every error in the D-long window ending at t reaches tau."""
    return np.array([1 if t >= D - 1 and all(e[k] >= tau for k in range(t - D + 1, t + 1)) else 0
                     for t in range(len(e))], dtype=np.int8)


def test_prediction_error():
    assert prediction_error([1, 2, 3], [1, 2, 3]) == 0.0
    assert prediction_error([0, 0], [3, 4]) == pytest.approx(12.5)
    with pytest.raises(ValueError, match="length mismatch"):
        prediction_error([1, 2], [1, 2, 3])


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(0.0, 5)
    with pytest.raises(ValueError):
        DetectorConfig(1.0, 0)
    DetectorConfig(1.8e6, 50)  # the published server operating point is accepted


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=200),
       st.floats(0.01, 10), st.integers(1, 30))
def test_flags_match_brute_force(errs, tau, D):
    es = ErrorStream(np.array(errs))
    if D > len(errs):
        with pytest.warns(UserWarning):
            res = flag_stream(es, DetectorConfig(tau, D))
        assert res.flags.sum() == 0 and res.status.startswith("warning")
        return
    res = flag_stream(es, DetectorConfig(tau, D))
    assert np.array_equal(res.flags, brute_flags(errs, tau, D))
    assert res.intervals == alarm_intervals(res.flags)


@pytest.mark.filterwarnings("ignore:decision window")
@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=5, max_size=80),
       st.floats(0.01, 10), st.integers(1, 5))
def test_monotone_in_tau_and_d(errs, tau, D):
    es = ErrorStream(np.array(errs))
    base = flag_stream(es, DetectorConfig(tau, D)).flags
    assert np.all(flag_stream(es, DetectorConfig(tau * 1.5, D)).flags <= base)
    assert np.all(flag_stream(es, DetectorConfig(tau, D + 1)).flags <= base)


def test_window_score_is_the_alarm_boundary():
    rng = np.random.default_rng(0)
    for _ in range(50):
        e = rng.random(40)
        D = int(rng.integers(1, 10))
        s = window_score(e, D)
        assert brute_flags(e, s, D).any()
        assert not brute_flags(e, np.nextafter(s, math.inf), D).any()
    assert window_score([1.0, 2.0], 3) == -math.inf


def test_latency_counts_from_onset():
    e = np.zeros(100)
    e[40:] = 5.0
    es = ErrorStream(e, sample_period=1.0, onset=40)
    # D attack samples are needed, the onset sample included
    assert detection_latency(es, DetectorConfig(1.0, 10)) == 10.0
    assert detection_latency(ErrorStream(np.zeros(100), onset=40), DetectorConfig(1.0, 3)) is None
    assert first_alarm([0, 0, 1, 1]) == 2 and first_alarm([0, 0]) is None


def test_sweep_picks_equal_error_point():
    rng = np.random.default_rng(1)
    benign = [ErrorStream(rng.random(200)) for _ in range(10)]
    attack = []
    for _ in range(10):
        e = rng.random(200)
        e[100:160] += 5.0
        attack.append(ErrorStream(e, onset=100))
    res = sweep(benign, attack, parse_tau_grid("0.5:10:40"), parse_d_grid("1:20:1"))
    assert res.fpr == 0.0 and res.fnr == 0.0 and res.fscore == 1.0
    assert len(res.grid) == 40 * 20
    assert all(lat is not None and lat <= 20 for lat in res.latencies_ms)
    lines = res.grid_csv().splitlines()
    assert lines[0] == "tau,D,fpr,fnr,tpr,fscore" and len(lines) == 801


def test_grid_parsing():
    g = parse_tau_grid("1e5:1e7:3")
    assert np.allclose(g, [1e5, 1e6, 1e7])
    assert np.allclose(parse_tau_grid("1:100:3(log)"), [1, 10, 100])
    assert parse_d_grid("10:50:20") == [10, 30, 50]
    for bad in ("1:2", "0:1:3", "5:1:2"):
        with pytest.raises(ValueError):
            parse_tau_grid(bad)
    with pytest.raises(ValueError):
        parse_d_grid("0:10:1")


def test_auto_grid_spans_errors():
    s = [ErrorStream(np.array([0.0, 1.0, 100.0]))]
    g = auto_tau_grid(s, n=10)
    assert g[0] > 0 and g[-1] >= 100.0
