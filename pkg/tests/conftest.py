"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from leakmon.geometry import BoxRegion, SiteSpec
from leakmon.plume import Source
from leakmon.records import WeatherSeries, generate_records, weight_records
from leakmon.wind import synthesize_sensor_data

SQUARE_200 = [(0.0, 0.0), (200.0, 0.0), (200.0, 200.0), (0.0, 200.0)]


def square_site(side: float = 200.0, **kwargs) -> SiteSpec:
    poly = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    return SiteSpec(master=BoxRegion.from_polygon(poly, name="master", **kwargs))


def closed_loop_fixture(
    n_windows: int = 50,
    noise_sigma: float = 0.0,
    conc_threshold: float = 0.5,
    seed: int = 0,
):
    """Noiseless synthetic round trip: 3 sensors, wind cycling over the
    sensor bearings so every sensor contributes records.

    Returns (site, truth, weather, streams, records).
    """
    site = square_site()
    truth = Source(x=120.0, y=80.0, z=2.0, rate_kg_h=20.0)
    sensors = [
        ("s1", 60.0, 40.0, 2.0),
        ("s2", 150.0, 140.0, 2.0),
        ("s3", 60.0, 140.0, 2.0),
    ]
    bearings = {
        sid: float(np.degrees(np.arctan2(y - truth.y, x - truth.x)) % 360.0)
        for sid, x, y, _ in sensors
    }
    offsets = [-10.0, -5.0, 0.0, 5.0, 10.0]
    dirs_w = [
        (bearings[sensors[j % 3][0]] + offsets[(j // 3) % 5]) % 360.0
        for j in range(n_windows)
    ]
    t = np.arange(n_windows * 5) * 60.0
    weather = WeatherSeries(
        t=t,
        w_dir=np.repeat(np.asarray(dirs_w), 5),
        w_spd=np.repeat(np.linspace(2.0, 5.0, n_windows), 5),
        solar=np.full(t.size, 400.0),
    )
    streams = synthesize_sensor_data(
        weather, truth, sensors, noise_sigma=noise_sigma, background=0.0, seed=seed
    )
    recs = generate_records(
        streams, weather, t_w=300.0, conc_threshold=conc_threshold, background=0.0
    )
    weight_records(recs)
    return site, truth, weather, streams, recs


@pytest.fixture(scope="session")
def closed_loop():
    return closed_loop_fixture()
