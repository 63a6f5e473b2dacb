"""Record generation and quality-weighting unit tests."""

import numpy as np
import pytest

from leakmon.records import (
    MAX_WINDOW_S,
    MIN_WINDOW_S,
    QUALITY_SPIKE_FACTOR,
    Record,
    RecordSet,
    SensorStream,
    WeatherSeries,
    WindowSamples,
    generate_records,
    normalize_weights,
    record_quality,
    weight_records,
)


def _weather(t, direction=270.0, speed=3.0, solar=500.0):
    t = np.asarray(t, dtype=float)
    return WeatherSeries(
        t=t,
        w_dir=np.full_like(t, direction) if np.isscalar(direction) else np.asarray(direction, float),
        w_spd=np.full_like(t, speed) if np.isscalar(speed) else np.asarray(speed, float),
        solar=np.full_like(t, solar),
    )


def test_stream_validation():
    with pytest.raises(ValueError):
        SensorStream("s", (0, 0, 2), t=[0, 10, 10], c=[1, 1, 1])
    with pytest.raises(ValueError):
        SensorStream("s", (0, 0, 2), t=[0, 10], c=[1, -0.5])
    with pytest.raises(ValueError):
        SensorStream("s", (0, 0, 2), t=[0, 10], c=[1])


def test_weather_validation():
    with pytest.raises(ValueError):
        WeatherSeries(t=[0, 1], w_dir=[0], w_spd=[1, 1], solar=[0, 0])
    with pytest.raises(ValueError):
        WeatherSeries(t=[1, 0], w_dir=[0, 0], w_spd=[1, 1], solar=[0, 0])


def test_window_length_bounds():
    stream = SensorStream("s", (0, 0, 2), t=np.arange(0, 600, 10.0), c=np.full(60, 10.0))
    weather = _weather(np.arange(0, 600, 10.0))
    for bad in (MIN_WINDOW_S - 1, MAX_WINDOW_S + 1):
        with pytest.raises(ValueError):
            generate_records([stream], weather, t_w=bad)
    generate_records([stream], weather, t_w=MIN_WINDOW_S)  # boundary accepted


def test_windowing_and_concentration_gate():
    t = np.arange(0, 600, 10.0)
    c = np.where(t < 300, 10.0, 3.0)  # second window mean excess 1 < threshold
    stream = SensorStream("s1", (50, 0, 2), t=t, c=c)
    recs = generate_records([stream], _weather(t), t_w=300.0, conc_threshold=5.0, background=2.0)
    assert len(recs) == 1
    r = recs.records[0]
    assert (r.t_start, r.t_end) == (0.0, 300.0)
    assert r.c == pytest.approx(8.0)  # background-subtracted window mean
    assert (r.s_x, r.s_y, r.s_z) == (50.0, 0.0, 2.0)
    assert r.w_dir == pytest.approx(270.0)
    assert r.w_spd == pytest.approx(3.0)


def test_high_wind_windows_dropped():
    t = np.arange(0, 300, 10.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([stream], _weather(t, speed=12.5), background=0.0, max_wind=12.0)
    assert len(recs) == 0


def test_calm_weather_samples_excluded_from_means():
    t = np.arange(0, 300, 10.0)
    # Calm half points east; only the workable half (west, 4 m/s) may count.
    speed = np.where(t < 150, 0.05, 4.0)
    direction = np.where(t < 150, 90.0, 270.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([stream], _weather(t, direction=direction, speed=speed), background=0.0)
    assert len(recs) == 1
    assert recs.records[0].w_dir == pytest.approx(270.0)
    assert recs.records[0].w_spd == pytest.approx(4.0)


def test_direction_averaging_is_circular():
    t = np.arange(0, 300, 10.0)
    direction = np.where(np.arange(t.size) % 2 == 0, 350.0, 10.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([stream], _weather(t, direction=direction), background=0.0)
    assert recs.records[0].w_dir == pytest.approx(0.0, abs=1e-9)


def test_trailing_partial_window_rule():
    # 440 s of data, t_w=300: trailing piece is 140 s < 150 s, dropped.
    t = np.arange(0, 440, 10.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([stream], _weather(np.arange(0, 600, 10.0)), background=0.0)
    assert [r.t_start for r in recs.records] == [0.0]
    # 460 s of data: trailing piece is 150.000000001 s, kept.
    t = np.arange(0, 460, 10.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([stream], _weather(np.arange(0, 600, 10.0)), background=0.0)
    assert [r.t_start for r in recs.records] == [0.0, 300.0]


def test_rolling_background_uses_trailing_history():
    t = np.arange(0, 1200, 10.0)
    c = np.where(t < 600, 1.0, 12.0)  # quiet day, then a release
    stream = SensorStream("s1", (0, 0, 2), t=t, c=c)
    recs = generate_records([stream], _weather(t), t_w=300.0, conc_threshold=5.0)
    assert [r.t_start for r in recs.records] == [600.0, 900.0]
    for r in recs.records:
        assert r.c == pytest.approx(11.0)  # 12 minus the 1.0 historical floor


def test_records_sorted_by_sensor_then_time():
    t = np.arange(0, 600, 10.0)
    mk = lambda sid: SensorStream(sid, (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = generate_records([mk("s2"), mk("s1")], _weather(t), background=0.0)
    keys = [(r.sensor_id, r.t_start) for r in recs.records]
    assert keys == sorted(keys)
    assert keys[0][0] == "s1"


def test_empty_inputs_give_empty_set():
    assert len(generate_records([], _weather(np.arange(0, 300, 10.0)))) == 0
    recs = RecordSet()
    assert weight_records(recs).weights.size == 0


def test_record_matrix_layout():
    r = Record(w_dir=270.0, w_spd=3.0, w_stab=4, s_x=1.0, s_y=2.0, s_z=3.0, c=7.0)
    rs = RecordSet(records=[r])
    m = rs.matrix()
    assert m.shape == (1, 7)
    assert np.array_equal(m[0], [270.0, 3.0, 4.0, 1.0, 2.0, 3.0, 7.0])
    w_dir, w_spd, w_stab, pos, c = rs.as_arrays()
    assert pos.shape == (1, 3) and w_stab.dtype.kind == "i"


def _samples(excess, above=None, w_dir=None, w_spd=None):
    excess = np.asarray(excess, dtype=float)
    return WindowSamples(
        excess=excess,
        above=excess > 5.0 if above is None else np.asarray(above, bool),
        w_dir=np.full(excess.size, 270.0) if w_dir is None else np.asarray(w_dir, float),
        w_spd=np.full(excess.size, 3.0) if w_spd is None else np.asarray(w_spd, float),
    )


def test_quality_steady_window_is_perfect():
    q = record_quality([_samples(np.full(30, 8.0))])
    assert q[0] == pytest.approx(1.0)


def test_quality_spike_cut_is_exact_factor():
    excess = np.full(30, 8.0)
    long_run = _samples(excess)
    spike = _samples(excess, above=np.zeros(30, bool))
    q = record_quality([long_run, spike])
    assert q[1] == pytest.approx(q[0] * QUALITY_SPIKE_FACTOR)


def test_quality_penalizes_wind_drift():
    steady = _samples(np.full(30, 8.0))
    drifting = _samples(np.full(30, 8.0), w_dir=np.linspace(250.0, 290.0, 30))
    veering_speed = _samples(np.full(30, 8.0), w_spd=np.linspace(2.0, 6.0, 30))
    q = record_quality([steady, drifting, veering_speed])
    assert q[1] < q[0] and q[2] < q[0]


def test_quality_noise_lowers_snr():
    rng = np.random.default_rng(0)
    noisy = _samples(np.abs(8.0 + 4.0 * rng.standard_normal(30)))
    q = record_quality([_samples(np.full(30, 8.0)), noisy])
    assert q[1] < q[0]


def test_normalize_weights_contract():
    w = normalize_weights(np.array([1.0, 3.0]))
    assert np.allclose(w, [0.25, 0.75])
    assert np.allclose(normalize_weights(np.zeros(4)), 0.25)  # uniform fallback
    assert normalize_weights(np.zeros(0)).size == 0
    with pytest.raises(ValueError):
        normalize_weights(np.array([1.0, -1.0]))


def test_weight_records_attaches_normalized_weights():
    t = np.arange(0, 1200, 10.0)
    stream = SensorStream("s1", (0, 0, 2), t=t, c=np.full(t.size, 20.0))
    recs = weight_records(generate_records([stream], _weather(t), background=0.0))
    assert len(recs) == 4
    assert recs.weights.shape == (4,)
    assert recs.weights.sum() == pytest.approx(1.0)
    assert np.all(recs.weights > 0)
