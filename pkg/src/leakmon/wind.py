"""Stochastic wind generation, wind-rose handling and data synthesis.

Two generators produce weather time series: a free pair of intertwined
random walks (outer period-level moves, inner per-sample jitter), and a
conditioned variant whose period-level moves are roulette-sampled from a
wind rose restricted to the neighborhood of the current state. Both
yield complete weather series (direction, speed, synthesized solar)
ready for replay through the record pipeline.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .angles import wrap_deg
from .plume import CALM_WIND_MS, Source, classify_stability_array, predict_ppm_records
from .records import SensorStream, WeatherSeries

log = logging.getLogger(__name__)

MPH_TO_MS = 0.44704

N_DIR_BINS = 36
N_SPD_BINS = 7

DEFAULT_DW1 = 15.0
DEFAULT_DS1 = 3.0
DEFAULT_DW2 = 45.0
DEFAULT_DS2 = 6.0
DEFAULT_SPEED_MIN = 1.0
DEFAULT_SPEED_MAX = 15.0

# Solar synthesis: half-sine day between these clock offsets (s).
DAY_START_S = 6 * 3600.0
DAY_END_S = 18 * 3600.0
DEFAULT_SOLAR_PEAK = 900.0
DEFAULT_SOLAR_NOISE = 0.1


@dataclass
class WindModelConfig:
    """Knobs for both wind generators.

    ``span_hours`` covers the whole series, carved into periods of
    ``period_minutes`` sampled every ``sample_interval_s``. dW1/dS1
    bound the per-sample jitter around the period state; dW2/dS2 bound
    the period-to-period moves.
    """

    span_hours: float = 24.0
    period_minutes: float = 60.0
    sample_interval_s: float = 60.0
    dw1: float = DEFAULT_DW1
    ds1: float = DEFAULT_DS1
    dw2: float = DEFAULT_DW2
    ds2: float = DEFAULT_DS2
    speed_min: float = DEFAULT_SPEED_MIN
    speed_max: float = DEFAULT_SPEED_MAX
    start_dir: float | None = None
    start_speed: float | None = None
    t0: float = 0.0
    solar_constant: float | None = None
    solar_peak: float = DEFAULT_SOLAR_PEAK
    solar_noise: float = DEFAULT_SOLAR_NOISE
    seed: int = 0

    def __post_init__(self):
        if self.span_hours <= 0 or self.period_minutes <= 0 or self.sample_interval_s <= 0:
            raise ValueError("span, period and sample interval must be positive")
        if self.speed_min > self.speed_max or self.speed_min < CALM_WIND_MS:
            raise ValueError("invalid speed range")

    @property
    def n_periods(self) -> int:
        return max(1, round(60.0 * self.span_hours / self.period_minutes))

    @property
    def samples_per_period(self) -> int:
        return max(1, round(60.0 * self.period_minutes / self.sample_interval_s))


@dataclass
class WindRose:
    """Joint direction/speed mass on a 36 x 7 bin grid.

    ``wcol`` rows are [lo, lo+width] in math degrees, sorted by lo, the
    last bin possibly wrapping past 360. ``scol`` rows are contiguous
    [lo, hi] speeds in m/s.
    """

    wrose: np.ndarray
    wcol: np.ndarray
    scol: np.ndarray

    def __post_init__(self):
        self.wrose = np.asarray(self.wrose, dtype=float)
        self.wcol = np.asarray(self.wcol, dtype=float)
        self.scol = np.asarray(self.scol, dtype=float)
        if self.wrose.shape != (N_DIR_BINS, N_SPD_BINS):
            raise ValueError(f"rose matrix must be {N_DIR_BINS}x{N_SPD_BINS}, got {self.wrose.shape}")
        if self.wcol.shape != (N_DIR_BINS, 2) or self.scol.shape != (N_SPD_BINS, 2):
            raise ValueError("bin bound arrays have the wrong shape")
        if np.any(self.wrose < 0):
            raise ValueError("negative rose mass")
        total = self.wrose.sum()
        if total <= 0:
            raise ValueError("rose has zero total mass")
        # Leave an already-normalized matrix untouched so parse/serialize
        # round-trips are bit-exact.
        if abs(total - 1.0) > 1e-12:
            self.wrose = self.wrose / total
        widths = self.wcol[:, 1] - self.wcol[:, 0]
        if np.any(widths <= 0) or abs(widths.sum() - 360.0) > 1e-6:
            raise ValueError("direction bins must be positive-width and cover 360 degrees")
        if np.any(self.scol[:, 1] <= self.scol[:, 0]):
            raise ValueError("speed bins must have positive width")

    def dir_bin(self, d: float) -> int:
        """Index of the direction bin containing d (wrap-aware)."""
        d = float(wrap_deg(d))
        off = (d - self.wcol[:, 0]) % 360.0
        inside = off < (self.wcol[:, 1] - self.wcol[:, 0])
        idx = np.nonzero(inside)[0]
        return int(idx[0])

    def spd_bin(self, s: float) -> int:
        """Index of the speed bin containing s, clamped to the rose range."""
        if s < self.scol[0, 0]:
            return 0
        if s >= self.scol[-1, 1]:
            return N_SPD_BINS - 1
        return int(np.searchsorted(self.scol[:, 1], s, side="right"))


def roulette_select(rng: np.random.Generator, weights: np.ndarray) -> int | None:
    """Fitness-proportional pick; None when all weights are zero."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        return None
    cum = np.cumsum(w)
    return int(np.searchsorted(cum, rng.random() * total, side="right"))


def _dir_candidates(rose: WindRose, cur: float, dw2: float) -> np.ndarray:
    """Direction bins fully inside the circular window cur +- dw2.

    Full containment keeps every drawable value within the move window;
    the bin holding the current value always qualifies when dw2 is at
    least one bin wide.
    """
    lo = rose.wcol[:, 0]
    width = rose.wcol[:, 1] - rose.wcol[:, 0]
    d_lo = (lo - cur + 180.0) % 360.0 - 180.0
    return np.nonzero((d_lo >= -dw2) & (d_lo + width <= dw2))[0]


def _spd_candidates(rose: WindRose, cur: float, ds2: float) -> np.ndarray:
    lo, hi = rose.scol[:, 0], rose.scol[:, 1]
    return np.nonzero((lo >= cur - ds2) & (hi <= cur + ds2))[0]


def conditioned_step(
    rose: WindRose,
    cur_dir: float,
    cur_spd: float,
    dw2: float,
    ds2: float,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One rose-conditioned period move from (cur_dir, cur_spd).

    Direction first: roulette over the direction bins near the current
    direction, weighted by the current speed bin's column, then a
    uniform draw inside the winner. Speed then updates symmetrically
    using the new direction bin's row. A zero-mass candidate set keeps
    the current value.
    """
    s_no = rose.spd_bin(cur_spd)
    cand = _dir_candidates(rose, cur_dir, dw2)
    new_dir = cur_dir
    if cand.size:
        pick = roulette_select(rng, rose.wrose[cand, s_no])
        if pick is None:
            log.debug("conditioned_step: zero direction mass near %.0f deg; holding", cur_dir)
        else:
            b = cand[pick]
            lo = rose.wcol[b, 0]
            hi = rose.wcol[b, 1]
            new_dir = float(wrap_deg(lo + rng.random() * (hi - lo)))

    w_no = rose.dir_bin(new_dir)
    cand_s = _spd_candidates(rose, cur_spd, ds2)
    new_spd = cur_spd
    if cand_s.size:
        pick = roulette_select(rng, rose.wrose[w_no, cand_s])
        if pick is None:
            log.debug("conditioned_step: zero speed mass near %.1f m/s; holding", cur_spd)
        else:
            b = cand_s[pick]
            new_spd = float(rose.scol[b, 0] + rng.random() * (rose.scol[b, 1] - rose.scol[b, 0]))
    return new_dir, new_spd


def _make_solar(t: np.ndarray, config: WindModelConfig, rng: np.random.Generator) -> np.ndarray:
    if config.solar_constant is not None:
        return np.full(t.size, float(config.solar_constant))
    clock = np.asarray(t, dtype=float) % 86400.0
    phase = (clock - DAY_START_S) / (DAY_END_S - DAY_START_S)
    base = config.solar_peak * np.sin(np.pi * np.clip(phase, 0.0, 1.0))
    base = np.where((phase > 0.0) & (phase < 1.0), base, 0.0)
    if config.solar_noise > 0:
        base = base * (1.0 + config.solar_noise * rng.normal(size=t.size))
    return np.maximum(base, 0.0)


def _walk(config: WindModelConfig, inter_update) -> WeatherSeries:
    """Common skeleton: per-sample jitter around a period state that
    moves via ``inter_update(rng, dir, spd) -> (dir, spd)``."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    big_dir = float(config.start_dir) if config.start_dir is not None else float(rng.uniform(0.0, 360.0))
    big_spd = (
        float(config.start_speed)
        if config.start_speed is not None
        else float(rng.uniform(config.speed_min, config.speed_max))
    )
    big_dir = float(wrap_deg(big_dir))
    big_spd = float(np.clip(big_spd, config.speed_min, config.speed_max))

    n_t = config.n_periods
    per = config.samples_per_period
    dirs = np.empty(n_t * per)
    spds = np.empty(n_t * per)
    i = 0
    for _ in range(n_t):
        for _ in range(per):
            tau = rng.random()
            sign = 1.0 if rng.random() < 0.5 else -1.0
            d = wrap_deg(big_dir + sign * tau * config.dw1)
            tau = rng.random()
            sign = 1.0 if rng.random() < 0.5 else -1.0
            s = float(np.clip(big_spd + sign * tau * config.ds1, config.speed_min, config.speed_max))
            dirs[i] = d
            spds[i] = s
            i += 1
        big_dir, big_spd = inter_update(rng, big_dir, big_spd)
        big_dir = float(wrap_deg(big_dir))
        big_spd = float(np.clip(big_spd, config.speed_min, config.speed_max))

    t = config.t0 + config.sample_interval_s * np.arange(n_t * per, dtype=float)
    solar = _make_solar(t, config, rng)
    return WeatherSeries(t=t, w_dir=dirs, w_spd=spds, solar=solar)


def synthetic_wind(config: WindModelConfig) -> WeatherSeries:
    """Free two-level random walk realization."""

    def update(rng, d, s):
        tau = rng.random()
        sign = 1.0 if rng.random() < 0.5 else -1.0
        d2 = d + sign * tau * config.dw2
        tau = rng.random()
        sign = 1.0 if rng.random() < 0.5 else -1.0
        s2 = s + sign * tau * config.ds2
        return d2, s2

    return _walk(config, update)


def conditioned_wind(rose: WindRose, config: WindModelConfig) -> WeatherSeries:
    """Realization whose period moves follow the wind rose.

    Start values default to a roulette draw over the whole rose instead
    of a uniform guess.
    """
    cfg = config
    if cfg.start_dir is None or cfg.start_speed is None:
        seed_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
        flat = roulette_select(seed_rng, rose.wrose.ravel())
        bi, bj = divmod(int(flat), N_SPD_BINS)
        d0 = float(wrap_deg(rose.wcol[bi, 0] + seed_rng.random() * (rose.wcol[bi, 1] - rose.wcol[bi, 0])))
        s0 = float(rose.scol[bj, 0] + seed_rng.random() * (rose.scol[bj, 1] - rose.scol[bj, 0]))
        s0 = float(np.clip(s0, cfg.speed_min, cfg.speed_max))
        cfg = replace(cfg, start_dir=d0, start_speed=s0)

    def update(rng, d, s):
        d2, s2 = conditioned_step(rose, d, s, cfg.dw2, cfg.ds2, rng)
        return d2, s2

    return _walk(cfg, update)


def parse_wind_rose_text(text: str) -> WindRose:
    """Parse a wind rose CSV document.

    Two labeled header lines carry the 37 direction-bin edges and 8
    speed-bin edges, then 36 rows of 7 mass values. Direction edges
    labeled ``dir_edges_deg_compass`` (clockwise from north) are
    converted to math convention; speeds labeled ``speed_edges_mph``
    are converted to m/s.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if len(lines) != 2 + N_DIR_BINS:
        raise ValueError(f"wind rose file must have 2 header lines plus {N_DIR_BINS} rows, got {len(lines)} lines")

    dir_parts = lines[0].split(",")
    spd_parts = lines[1].split(",")
    dir_label, dir_edges = dir_parts[0].strip(), np.array([float(v) for v in dir_parts[1:]])
    spd_label, spd_edges = spd_parts[0].strip(), np.array([float(v) for v in spd_parts[1:]])
    if dir_edges.size != N_DIR_BINS + 1:
        raise ValueError(f"expected {N_DIR_BINS + 1} direction edges, got {dir_edges.size}")
    if spd_edges.size != N_SPD_BINS + 1:
        raise ValueError(f"expected {N_SPD_BINS + 1} speed edges, got {spd_edges.size}")

    if dir_label == "dir_edges_deg_compass":
        lo = wrap_deg(90.0 - dir_edges[1:])
        width = np.diff(dir_edges)
    elif dir_label == "dir_edges_deg_math":
        lo = wrap_deg(dir_edges[:-1])
        width = np.diff(dir_edges)
    else:
        raise ValueError(f"unknown direction edge label {dir_label!r}")
    if spd_label == "speed_edges_mph":
        spd_edges = spd_edges * MPH_TO_MS
    elif spd_label != "speed_edges_ms":
        raise ValueError(f"unknown speed edge label {spd_label!r}")

    mat = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    if mat.shape != (N_DIR_BINS, N_SPD_BINS):
        raise ValueError(f"rose matrix must be {N_DIR_BINS}x{N_SPD_BINS}, got {mat.shape}")

    order = np.argsort(lo, kind="stable")
    wcol = np.column_stack([lo[order], lo[order] + width[order]])
    scol = np.column_stack([spd_edges[:-1], spd_edges[1:]])
    return WindRose(wrose=mat[order], wcol=wcol, scol=scol)


def parse_wind_rose(path: str) -> WindRose:
    """Load a wind rose CSV file; see :func:`parse_wind_rose_text`."""
    with open(path, encoding="utf-8") as f:
        return parse_wind_rose_text(f.read())


def wind_rose_text(rose: WindRose) -> str:
    """Rose document in the math/ms flavor; parse round-trips bit-exactly."""
    edges = np.append(rose.wcol[:, 0], rose.wcol[0, 0] + 360.0)
    sedges = np.append(rose.scol[:, 0], rose.scol[-1, 1])
    lines = [
        "dir_edges_deg_math," + ",".join(repr(float(v)) for v in edges),
        "speed_edges_ms," + ",".join(repr(float(v)) for v in sedges),
    ]
    for row in rose.wrose:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def serialize_wind_rose(rose: WindRose, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(wind_rose_text(rose))


def realization_seeds(master_seed: int, count: int) -> list[int]:
    """Stable per-realization child seeds."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(count)]


def synthesize_sensor_data(
    weather: WeatherSeries,
    source: Source,
    sensors: list[tuple[str, float, float, float]],
    noise_sigma: float = 0.0,
    background: float = 0.0,
    seed: int = 0,
) -> list[SensorStream]:
    """Forward-model ppm streams for every sensor under a weather series.

    Calm samples transport nothing (plume contribution zero). Gaussian
    noise is per sample and per sensor, and readings clip at zero.
    """
    n_t = weather.t.size
    out = []
    stab = classify_stability_array(weather.w_spd, weather.solar)
    for sensor_id, sx, sy, sz in sensors:
        # Noise keyed by (seed, sensor id) so adding or reordering
        # sensors never changes another sensor's stream.
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, zlib.crc32(sensor_id.encode())])))
        ppm = np.zeros(n_t)
        ok = weather.w_spd >= CALM_WIND_MS
        if ok.any():
            pos = np.broadcast_to(np.array([sx, sy, sz]), (int(ok.sum()), 3))
            ppm[ok] = predict_ppm_records(
                source.x,
                source.y,
                source.z,
                source.rate_kg_h,
                pos,
                weather.w_dir[ok],
                weather.w_spd[ok],
                stab[ok],
            )
        c = ppm + background
        if noise_sigma > 0:
            c = c + rng.normal(0.0, noise_sigma, size=n_t)
        out.append(SensorStream(sensor_id=sensor_id, position=(sx, sy, sz), t=weather.t.copy(), c=np.maximum(c, 0.0)))
    return out
