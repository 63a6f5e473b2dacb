"""Angular receptivity cones from high-frequency detections.

Each sensor's above-threshold samples are binned by the upwind bearing
(the direction the gas arrived from). A dominant angular interval
becomes a cone: two half-plane cuts anchored at the sensor that restrict
where the source can sit, plus a tightened bounding box for the search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .angles import wrap_deg
from .geometry import BoxRegion, clip_polygon
from .plume import CALM_WIND_MS
from .records import SensorStream, WeatherSeries, _rolling_background

log = logging.getLogger(__name__)

BIN_WIDTH_DEG = 5.0
N_BINS = int(360.0 / BIN_WIDTH_DEG)

# Validity gates for a candidate cone (tunable; the angular-span floor
# comes in as min_span).
MIN_ACTIVE_COUNT = 5
MIN_ACTIVE_RATIO = 0.02
DEFAULT_MIN_SPAN_DEG = 10.0
DEFAULT_ACTIVE_THRESHOLD = 5.0

# A cluster must hold this share of a sensor's active mass to stand
# alone; otherwise clusters compete on (count, mean concentration).
DOMINANT_MASS_SHARE = 0.95

# Weather samples are matched to sensor samples within this tolerance.
ALIGN_TOL_S = 30.0


@dataclass(frozen=True)
class Cone:
    sensor_id: str
    apex: tuple[float, float]
    d_min: float
    d_mid: float
    d_max: float
    width: float
    active_count: int
    active_ratio: float
    mean_c: float
    max_c: float


@dataclass
class ConeSet:
    cones: list[Cone] = field(default_factory=list)
    g_cuts: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    clb: np.ndarray | None = None
    cub: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.cones)


def wedge_constraints(apex, d_min: float, d_max: float) -> np.ndarray:
    """Two 6-coefficient half-plane rows for the wedge d_min..d_max (ccw).

    Rows are [a b 0 0 0 c] with unit (a, b); a point p is inside the
    wedge iff both rows evaluate <= 0 on [p_x p_y 1]. Requires an
    angular span below 180 degrees (wider is not an intersection of two
    half-planes).
    """
    span = (d_max - d_min) % 360.0
    if span == 0.0 or span >= 180.0:
        raise ValueError(f"wedge span {span} degrees not representable by two half-planes")
    sx, sy = float(apex[0]), float(apex[1])
    rows = np.zeros((2, 6))
    t0 = np.deg2rad(d_min)
    rows[0, 0] = np.sin(t0)
    rows[0, 1] = -np.cos(t0)
    t1 = np.deg2rad(d_max)
    rows[1, 0] = -np.sin(t1)
    rows[1, 1] = np.cos(t1)
    rows[:, 5] = -(rows[:, 0] * sx + rows[:, 1] * sy)
    return rows


def _circular_runs(mask: np.ndarray):
    """Maximal runs of True bins on the circle, as (start, length) pairs."""
    n = mask.size
    if mask.all():
        return [(0, n)]
    if not mask.any():
        return []
    # Rotate a False bin to index 0 so runs never wrap the array seam.
    first_false = int(np.argmin(mask))
    rolled = np.roll(mask, -first_false)
    runs = []
    start = None
    for i, v in enumerate(rolled):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append(((start + first_false) % n, i - start))
            start = None
    if start is not None:
        runs.append(((start + first_false) % n, rolled.size - start))
    return runs


def _align(stream: SensorStream, wt: np.ndarray) -> np.ndarray:
    """Index of the nearest weather sample per sensor sample; -1 if too far."""
    idx = np.searchsorted(wt, stream.t)
    idx = np.clip(idx, 0, wt.size - 1)
    left = np.clip(idx - 1, 0, wt.size - 1)
    pick = np.where(np.abs(wt[left] - stream.t) <= np.abs(wt[idx] - stream.t), left, idx)
    ok = np.abs(wt[pick] - stream.t) <= ALIGN_TOL_S
    return np.where(ok, pick, -1)


def extract_cones(
    streams: list[SensorStream],
    weather: WeatherSeries,
    active_threshold: float = DEFAULT_ACTIVE_THRESHOLD,
    min_span: float = DEFAULT_MIN_SPAN_DEG,
    background: float | None = None,
    master: BoxRegion | None = None,
) -> ConeSet:
    """Extract at most one receptivity cone per sensor.

    Samples above ``active_threshold`` (background-relative) are binned
    by upwind bearing in 5-degree bins; maximal nonzero runs become
    candidate clusters. A cluster standing alone with at least 95% of
    the active mass wins outright, otherwise clusters are ranked by
    (active count, mean concentration). The winner must pass the count,
    ratio and span gates and stay under a 180-degree span. When
    ``master`` is given the reduced bounds clb/cub are attached.
    """
    out = ConeSet()
    if weather.t.size == 0:
        return out
    keep = weather.w_spd >= CALM_WIND_MS
    wt, wdir = weather.t[keep], weather.w_dir[keep]
    if wt.size == 0:
        return out

    for stream in sorted(streams, key=lambda s: s.sensor_id):
        if stream.t.size == 0:
            continue
        widx = _align(stream, wt)
        valid = widx >= 0
        if not valid.any():
            continue
        bg = _rolling_background(stream, float(stream.t[-1]) + 1.0) if background is None else float(background)
        excess = stream.c[valid] - bg
        bearings = wrap_deg(wdir[widx[valid]] + 180.0)
        active = excess > active_threshold
        n_total = int(valid.sum())
        n_active = int(active.sum())
        if n_active == 0:
            continue

        bins = np.minimum((bearings[active] / BIN_WIDTH_DEG).astype(int), N_BINS - 1)
        counts = np.bincount(bins, minlength=N_BINS)
        runs = _circular_runs(counts > 0)

        def run_stats(run):
            start, length = run
            members = np.isin(bins, (start + np.arange(length)) % N_BINS)
            vals = excess[active][members]
            return int(members.sum()), float(vals.mean()), float(vals.max())

        stats = [run_stats(r) for r in runs]
        order = sorted(range(len(runs)), key=lambda i: (stats[i][0], stats[i][1]), reverse=True)
        top = order[0]
        if stats[top][0] < DOMINANT_MASS_SHARE * n_active and len(runs) > 1:
            log.info(
                "extract_cones: sensor %s has %d competing clusters; keeping the primary",
                stream.sensor_id,
                len(runs),
            )
        start, length = runs[top]
        span = length * BIN_WIDTH_DEG
        count, mean_c, max_c = stats[top]
        if count < MIN_ACTIVE_COUNT or count < MIN_ACTIVE_RATIO * n_total:
            continue
        if span < min_span or span >= 180.0:
            if span >= 180.0:
                log.info(
                    "extract_cones: sensor %s active span %.0f degrees too wide to constrain",
                    stream.sensor_id,
                    span,
                )
            continue
        if mean_c < active_threshold:
            continue

        d_min = wrap_deg(start * BIN_WIDTH_DEG)
        d_max = wrap_deg(d_min + span)
        d_mid = wrap_deg(d_min + span / 2.0)
        apex = (stream.position[0], stream.position[1])
        cone = Cone(
            sensor_id=stream.sensor_id,
            apex=apex,
            d_min=float(d_min),
            d_mid=float(d_mid),
            d_max=float(d_max),
            width=float(span),
            active_count=count,
            active_ratio=count / n_total,
            mean_c=mean_c,
            max_c=max_c,
        )
        out.cones.append(cone)

    if out.cones:
        out.g_cuts = np.vstack([wedge_constraints(c.apex, c.d_min, c.d_max) for c in out.cones])
    if master is not None:
        out.clb, out.cub = reduced_bounds(out, master)
    return out


def reduced_bounds(cones: ConeSet, master: BoxRegion) -> tuple[np.ndarray, np.ndarray]:
    """Tighten the master box to the cone-wedge intersection footprint.

    Clips the master's xy rectangle by every cut; the result's bounding
    box replaces the xy bounds while z, rate and index bounds carry over.
    An empty intersection falls back to the master bounds (conflicting
    cones suggest noise or multiple sources).
    """
    clb, cub = master.lb.copy(), master.ub.copy()
    if len(cones) == 0:
        return clb, cub
    poly = np.array(
        [
            [master.lb[0], master.lb[1]],
            [master.ub[0], master.lb[1]],
            [master.ub[0], master.ub[1]],
            [master.lb[0], master.ub[1]],
        ]
    )
    for row in cones.g_cuts:
        poly = clip_polygon(poly, (row[0], row[1], row[5]))
        if poly.shape[0] == 0:
            log.warning("reduced_bounds: cone intersection empty; keeping master bounds")
            return clb, cub
    clb[0], clb[1] = poly[:, 0].min(), poly[:, 1].min()
    cub[0], cub[1] = poly[:, 0].max(), poly[:, 1].max()
    return clb, cub
