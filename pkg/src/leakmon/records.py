"""Windowed observation records from raw sensor and weather streams.

Raw ppm samples are partitioned into fixed windows, averaged together
with the co-occurring wind, gated on elevated concentration and workable
wind speed, and weighted by a per-window quality score combining signal
to noise with atmospheric steadiness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .angles import angdiff_deg, circular_mean_deg, circular_std_deg
from .plume import CALM_WIND_MS, classify_stability

log = logging.getLogger(__name__)

# Retention gates: window-mean excess over background must exceed this
# (ppm) and mean wind speed must stay below the neutral-forcing limit.
DEFAULT_CONC_THRESHOLD = 5.0
DEFAULT_MAX_WIND = 12.0

# Window length limits in seconds (2 to 10 minutes).
MIN_WINDOW_S = 120.0
MAX_WINDOW_S = 600.0

# Quality-score shape parameters. Drift/σ scales are in degrees for
# direction and m/s for speed; the spike multiplier punishes windows
# whose detection is a single short puff.
QUALITY_DRIFT_DIR_SCALE = 45.0
QUALITY_STD_DIR_SCALE = 30.0
QUALITY_DRIFT_SPD_SCALE = 3.0
QUALITY_MIN_RUN = 3
QUALITY_SPIKE_FACTOR = 0.1

# Rolling background: percentile of the trailing history window.
BACKGROUND_PERCENTILE = 10.0
BACKGROUND_LOOKBACK_S = 24 * 3600.0


@dataclass
class SensorStream:
    """Time-ordered ppm samples from one sensor at a fixed position."""

    sensor_id: str
    position: tuple[float, float, float]
    t: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.t.shape != self.c.shape:
            raise ValueError(f"stream {self.sensor_id}: time/value length mismatch")
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError(f"stream {self.sensor_id}: timestamps must strictly increase")
        if np.any(self.c < 0):
            raise ValueError(f"stream {self.sensor_id}: negative concentrations")


@dataclass
class WeatherSeries:
    """Co-located wind and solar telemetry."""

    t: np.ndarray
    w_dir: np.ndarray
    w_spd: np.ndarray
    solar: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.w_dir = np.asarray(self.w_dir, dtype=float)
        self.w_spd = np.asarray(self.w_spd, dtype=float)
        self.solar = np.asarray(self.solar, dtype=float)
        n = self.t.size
        for name in ("w_dir", "w_spd", "solar"):
            if getattr(self, name).size != n:
                raise ValueError(f"weather series: {name} length mismatch")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("weather series: timestamps must strictly increase")


@dataclass(frozen=True)
class Record:
    """One retained observation: wind state, sensor position, excess ppm."""

    w_dir: float
    w_spd: float
    w_stab: int
    s_x: float
    s_y: float
    s_z: float
    c: float
    sensor_id: str = ""
    t_start: float = 0.0
    t_end: float = 0.0


@dataclass
class WindowSamples:
    """Raw per-window sample vectors behind one record, for quality scoring."""

    excess: np.ndarray
    above: np.ndarray
    w_dir: np.ndarray
    w_spd: np.ndarray


@dataclass
class RecordSet:
    records: list[Record] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    raw: list[WindowSamples] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def as_arrays(self):
        """Column arrays (w_dir, w_spd, w_stab, positions (n,3), c) for vector math."""
        n = len(self.records)
        w_dir = np.array([r.w_dir for r in self.records])
        w_spd = np.array([r.w_spd for r in self.records])
        w_stab = np.array([r.w_stab for r in self.records], dtype=int)
        pos = np.array([[r.s_x, r.s_y, r.s_z] for r in self.records]).reshape(n, 3)
        c = np.array([r.c for r in self.records])
        return w_dir, w_spd, w_stab, pos, c

    def matrix(self) -> np.ndarray:
        """The (n_r, 7) record matrix [w_dir w_spd w_stab s_x s_y s_z c]."""
        w_dir, w_spd, w_stab, pos, c = self.as_arrays()
        return np.column_stack([w_dir, w_spd, w_stab.astype(float), pos, c])


def _window_edges(t0: float, t1: float, t_w: float):
    """Non-overlapping windows aligned to t0; trailing partial kept if >= t_w/2."""
    edges = []
    start = t0
    while start < t1:
        end = min(start + t_w, t1)
        if end - start >= t_w / 2.0:
            edges.append((start, end))
        start += t_w
    return edges


def _rolling_background(stream: SensorStream, window_start: float) -> float:
    """Percentile of trailing history before the window; widens when short."""
    lo = window_start - BACKGROUND_LOOKBACK_S
    hist = stream.c[(stream.t >= lo) & (stream.t < window_start)]
    if hist.size == 0:
        hist = stream.c[stream.t < window_start]
    if hist.size == 0:
        # Stream starts here: use the leading samples as the best estimate.
        hist = stream.c[: max(1, min(stream.c.size, 10))]
    return float(np.percentile(hist, BACKGROUND_PERCENTILE))


def generate_records(
    streams: list[SensorStream],
    weather: WeatherSeries,
    t_w: float = 300.0,
    conc_threshold: float = DEFAULT_CONC_THRESHOLD,
    max_wind: float = DEFAULT_MAX_WIND,
    background: float | None = None,
) -> RecordSet:
    """Partition streams into windows and keep the meaningful ones.

    A (sensor, window) pair becomes a record when its background-relative
    mean concentration exceeds ``conc_threshold`` and its mean wind speed
    is below ``max_wind``. ``background`` fixes the background level;
    None selects the rolling trailing-percentile estimate per sensor.
    Calm weather samples are dropped before averaging. Returns an
    unweighted set (weights empty until assigned).
    """
    if not MIN_WINDOW_S <= t_w <= MAX_WINDOW_S:
        raise ValueError(f"window length {t_w} s outside [{MIN_WINDOW_S}, {MAX_WINDOW_S}]")
    out = RecordSet()
    if not streams or weather.t.size == 0:
        log.info("generate_records: empty streams or weather; no records")
        return out

    keep = weather.w_spd >= CALM_WIND_MS
    if not np.all(keep):
        log.debug("generate_records: dropped %d calm weather samples", int((~keep).sum()))
    wt, wdir, wspd, wsol = (a[keep] for a in (weather.t, weather.w_dir, weather.w_spd, weather.solar))

    entries = []
    for stream in sorted(streams, key=lambda s: s.sensor_id):
        if stream.t.size == 0:
            continue
        for start, end in _window_edges(float(stream.t[0]), float(stream.t[-1]) + 1e-9, t_w):
            s_mask = (stream.t >= start) & (stream.t < end)
            w_mask = (wt >= start) & (wt < end)
            if not s_mask.any() or not w_mask.any():
                continue
            bg = _rolling_background(stream, start) if background is None else float(background)
            excess = stream.c[s_mask] - bg
            mean_c = float(excess.mean())
            mean_spd = float(wspd[w_mask].mean())
            if not (mean_c > conc_threshold and mean_spd < max_wind):
                continue
            mean_dir = circular_mean_deg(wdir[w_mask])
            if not np.isfinite(mean_dir):
                continue
            stab = classify_stability(mean_spd, float(wsol[w_mask].mean()))
            x, y, z = stream.position
            entries.append(
                (
                    Record(
                        w_dir=mean_dir,
                        w_spd=mean_spd,
                        w_stab=stab,
                        s_x=x,
                        s_y=y,
                        s_z=z,
                        c=mean_c,
                        sensor_id=stream.sensor_id,
                        t_start=start,
                        t_end=end,
                    ),
                    WindowSamples(
                        excess=excess.copy(),
                        above=excess > conc_threshold,
                        w_dir=wdir[w_mask].copy(),
                        w_spd=wspd[w_mask].copy(),
                    ),
                )
            )
    entries.sort(key=lambda e: (e[0].sensor_id, e[0].t_start))
    out.records = [e[0] for e in entries]
    out.raw = [e[1] for e in entries]
    return out


def _longest_run(mask: np.ndarray) -> int:
    best = run = 0
    for v in mask:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def record_quality(raw: list[WindowSamples]) -> np.ndarray:
    """Per-record quality q = q_snr * q_atm, each factor in [0, 1].

    q_snr is the mean-to-deviation ratio mu/(mu + 2 sigma) of the excess
    signal, cut by a factor of 10 when the window never holds 3
    contiguous above-threshold samples (an isolated puff). q_atm decays
    exponentially with wind-direction drift and spread and with speed
    drift across the window.
    """
    q = np.zeros(len(raw))
    for i, w in enumerate(raw):
        mu = float(w.excess.mean())
        sd = float(w.excess.std())
        if sd == 0.0:
            q_snr = 1.0
        else:
            q_snr = float(np.clip(mu / (mu + 2.0 * sd), 0.0, 1.0))
        if _longest_run(w.above) < QUALITY_MIN_RUN:
            q_snr *= QUALITY_SPIKE_FACTOR

        half = w.w_dir.size // 2
        if half >= 1 and w.w_dir.size >= 2:
            d_first = circular_mean_deg(w.w_dir[:half])
            d_last = circular_mean_deg(w.w_dir[w.w_dir.size - half :])
            drift_dir = abs(angdiff_deg(d_last, d_first)) if np.isfinite(d_first) and np.isfinite(d_last) else 0.0
            drift_spd = abs(float(w.w_spd[w.w_spd.size - half :].mean() - w.w_spd[:half].mean()))
        else:
            drift_dir = 0.0
            drift_spd = 0.0
        sigma_dir = circular_std_deg(w.w_dir)
        if not np.isfinite(sigma_dir):
            sigma_dir = 0.0
        q_atm = (
            np.exp(-drift_dir / QUALITY_DRIFT_DIR_SCALE)
            * np.exp(-sigma_dir / QUALITY_STD_DIR_SCALE)
            * np.exp(-drift_spd / QUALITY_DRIFT_SPD_SCALE)
        )
        q[i] = q_snr * float(q_atm)
    return q


def normalize_weights(q: np.ndarray) -> np.ndarray:
    """Weights w_i = q_i / sum(q); all-zero quality falls back to uniform."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        return q.copy()
    if np.any(q < 0):
        raise ValueError("quality values must be nonnegative")
    total = q.sum()
    if total <= 0:
        log.warning("normalize_weights: all-zero quality; using uniform weights")
        return np.full(q.size, 1.0 / q.size)
    return q / total


def weight_records(recs: RecordSet) -> RecordSet:
    """Attach normalized quality weights to a record set in place."""
    if len(recs) == 0:
        recs.weights = np.zeros(0)
        return recs
    recs.weights = normalize_weights(record_quality(recs.raw))
    return recs
