"""Leak-source inversion: objectives, subspace transform and monitoring.

The source is sought either directly as X = [x y z r] (problem classes A
and B) or through the subspace formulation V = [v1..v4 b] (classes C and
D), where the first four variables live in master-bounds coordinates and
are mapped into the box of the selected subspace. Constraint violations
enter as quadratic penalties so the search space stays connected. A
moving-window monitor wraps the inversion into a leak lifecycle state
machine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import Bounds, minimize

from .cones import ConeSet, extract_cones
from .geometry import SiteSpec, evaluate_constraints
from .plume import predict_ppm_records, predict_ppm_records_batch
from .records import RecordSet, SensorStream, WeatherSeries, generate_records, weight_records
from .solvers import GAConfig, MCMCConfig, MarginalHistogram, VariableSpec, mcmc_sample, miga_minimize

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 1e5
DEFAULT_MIN_RECORDS = 5
DEFAULT_MIN_SENSORS = 1

# Local-refinement budget after the population search; see _polish.
DEFAULT_POLISH_MAXFEV = 8000

STATUS_OK = "ok"
STATUS_NO_RECORDS = "no meaningful records"
STATUS_INSUFFICIENT = "insufficient records"


@dataclass(frozen=True)
class SourceCandidate:
    x: float
    y: float
    z: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.r])


@dataclass
class InversionProblem:
    """One inversion task: records plus site context and penalty setup.

    The problem class follows from what is present: subspaces switch the
    search to the indexed formulation (C/D) and cones add linear cuts
    (B/D).
    """

    records: RecordSet
    site: SiteSpec
    cones: ConeSet | None = None
    gamma: float = DEFAULT_GAMMA
    min_records: int = DEFAULT_MIN_RECORDS
    min_sensors: int = DEFAULT_MIN_SENSORS

    @property
    def klass(self) -> str:
        has_cones = self.cones is not None and len(self.cones) > 0
        has_subs = len(self.site.subspaces) > 0
        if has_subs:
            return "D" if has_cones else "C"
        return "B" if has_cones else "A"

    def effective_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """clb/cub when cones tightened them, master bounds otherwise."""
        if self.cones is not None and self.cones.clb is not None:
            return self.cones.clb, self.cones.cub
        return self.site.master.lb, self.site.master.ub


def objective_wmse(x, records: RecordSet) -> float:
    """Weighted root-mean-square misfit between observed and modeled ppm.

    ``x`` is [x y z r]. Weights must be normalized; uniform weights make
    this the plain RMSE of the residuals.
    """
    n = len(records)
    if n == 0:
        raise ValueError("objective requires at least one record")
    w = np.asarray(records.weights, dtype=float)
    if w.size != n:
        raise ValueError("records are unweighted; assign weights first")
    xv = np.asarray(x, dtype=float)
    w_dir, w_spd, w_stab, pos, c_obs = records.as_arrays()
    pred = predict_ppm_records(xv[0], xv[1], xv[2], xv[3], pos, w_dir, w_spd, w_stab)
    return float(np.sqrt(np.sum(w * (c_obs - pred) ** 2)))


def round_half_away(v: float) -> int:
    """Round to nearest integer, halves away from zero (2.5 -> 3, -2.5 -> -3)."""
    return int(math.floor(v + 0.5)) if v >= 0 else int(math.ceil(v - 0.5))


def transform_variables(v: np.ndarray, site: SiteSpec):
    """Map V = [v1..v4 b] from master coordinates into subspace box b.

    Returns ``(X, b, g_box)``: the affinely rescaled candidate, the
    rounded and clamped subspace index, and that subspace's constraint
    rows. A degenerate master axis maps to the subspace lower bound.
    """
    v = np.asarray(v, dtype=float)
    n_b = site.n_boxes
    b = min(max(round_half_away(float(v[4])), 1), n_b)
    box = site.box(b)
    glb, gub = site.master.lb[:4], site.master.ub[:4]
    lb, ub = box.lb[:4], box.ub[:4]
    span = gub - glb
    frac = np.where(span > 0, (v[:4] - glb) / np.where(span > 0, span, 1.0), 0.0)
    x = frac * (ub - lb) + lb
    return SourceCandidate(float(x[0]), float(x[1]), float(x[2]), float(x[3])), b, box.g5


def untransform_variables(x, b: int, site: SiteSpec) -> np.ndarray:
    """Inverse of transform_variables for a fixed subspace index."""
    box = site.box(b)
    glb, gub = site.master.lb[:4], site.master.ub[:4]
    lb, ub = box.lb[:4], box.ub[:4]
    xv = np.asarray(x, dtype=float)[:4]
    span = ub - lb
    frac = np.where(span > 0, (xv - lb) / np.where(span > 0, span, 1.0), 0.0)
    return np.append(frac * (gub - glb) + glb, float(b))


def _penalty(rows: np.ndarray | None, vec5: np.ndarray, gamma: float) -> float:
    if rows is None or rows.shape[0] == 0:
        return 0.0
    g = evaluate_constraints(rows, vec5)
    return float(gamma * np.sum(np.maximum(0.0, g) ** 2))


def penalized_objective(v: np.ndarray, problem: InversionProblem) -> float:
    """Subspace-formulation objective: misfit plus constraint penalties.

    P(V) = F(X) + gamma * sum(max(0, g_box(X))^2), with the site hull
    and any cone cuts penalized the same way so infeasible candidates
    are dominated but the landscape stays finite. Non-finite misfit maps
    to +inf.
    """
    x, b, g_box = transform_variables(v, problem.site)
    f = objective_wmse(x.as_array(), problem.records)
    if not np.isfinite(f):
        return float("inf")
    vec5 = np.append(x.as_array(), float(b))
    p = f
    p += _penalty(g_box, vec5, problem.gamma)
    p += _penalty(problem.site.master.g5, vec5, problem.gamma)
    if problem.klass == "D":
        p += _penalty(problem.cones.g_cuts, vec5, problem.gamma)
    return p


def _direct_objective(x: np.ndarray, problem: InversionProblem) -> float:
    """Class A/B objective over X with site (and cone) penalties."""
    f = objective_wmse(x, problem.records)
    if not np.isfinite(f):
        return float("inf")
    vec5 = np.append(x, 1.0)
    p = f + _penalty(problem.site.master.g5, vec5, problem.gamma)
    if problem.klass == "B":
        p += _penalty(problem.cones.g_cuts, vec5, problem.gamma)
    return p


def _direct_objective_batch(problem: InversionProblem):
    """Population version of _direct_objective: (m, 4) rows -> (m,) values.

    Record arrays are hoisted out of the per-generation call so the
    optimizer's inner loop is pure array math.
    """
    recs = problem.records
    w = np.asarray(recs.weights, dtype=float)
    w_dir, w_spd, w_stab, pos, c_obs = recs.as_arrays()
    rows = [problem.site.master.g5]
    if problem.klass == "B":
        rows.append(problem.cones.g_cuts)
    rows = [r for r in rows if r is not None and r.shape[0]]

    def batch(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 4)
        pred = predict_ppm_records_batch(X, pos, w_dir, w_spd, w_stab)
        f = np.sqrt(np.sum(w * (c_obs - pred) ** 2, axis=1))
        vec5 = np.column_stack([X, np.ones(X.shape[0])])
        for g in rows:
            vals = evaluate_constraints(g, vec5)
            f = f + problem.gamma * np.sum(np.maximum(0.0, vals) ** 2, axis=1)
        return f

    return batch


@dataclass
class InversionSolution:
    status: str
    best: SourceCandidate | None = None
    b: int | None = None
    objective: float | None = None
    marginals: dict[str, MarginalHistogram] = field(default_factory=dict)
    residuals: np.ndarray | None = None
    n_records: int = 0
    n_sensors: int = 0
    klass: str = ""
    acceptance_rate: float | None = None
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "status": self.status,
            "class": self.klass,
            "n_records": self.n_records,
            "n_sensors": self.n_sensors,
            "diagnostics": list(self.diagnostics),
        }
        if self.best is not None:
            out["solution"] = {
                "x": self.best.x,
                "y": self.best.y,
                "z": self.best.z,
                "rate_kg_h": self.best.r,
                "subspace": self.b,
                "objective": self.objective,
            }
        if self.marginals:
            out["marginals"] = {
                k: {"edges": m.edges.tolist(), "counts": m.counts.tolist()} for k, m in self.marginals.items()
            }
        if self.acceptance_rate is not None:
            out["mcmc_acceptance"] = self.acceptance_rate
        return out


def _marginals_from_samples(samples: np.ndarray, lb: np.ndarray, ub: np.ndarray, bins: int):
    out = {}
    for k, name in enumerate(("x", "y", "z", "r")):
        lo, hi = float(lb[k]), float(ub[k])
        if hi <= lo:
            hi = lo + 1.0
        counts, edges = np.histogram(samples[:, k], bins=np.linspace(lo, hi, bins + 1))
        out[name] = MarginalHistogram(edges=edges, counts=counts)
    return out


def _polish(objective, x0: np.ndarray, lb: np.ndarray, ub: np.ndarray, maxfev: int) -> np.ndarray:
    """Deterministic local refinement of the optimizer's best point.

    Bounded Nelder-Mead from the population optimum; the result is kept
    only if it actually improves, so the reported point is never
    dominated by the start. ``maxfev`` caps the refinement budget; zero
    disables it.
    """
    if maxfev <= 0:
        return np.asarray(x0, dtype=float)
    f0 = objective(x0)
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=Bounds(lb, ub),
        options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": maxfev, "maxfev": maxfev},
    )
    if np.isfinite(res.fun) and res.fun < f0:
        return np.clip(res.x, lb, ub)
    return np.asarray(x0, dtype=float)


def invert(
    problem: InversionProblem,
    ga_config: GAConfig,
    mcmc_config: MCMCConfig | None = None,
    polish_maxfev: int = DEFAULT_POLISH_MAXFEV,
) -> InversionSolution:
    """Solve a leak inversion problem end to end.

    Classes A/B search X directly inside the effective bounds; classes
    C/D search V with an integer subspace index restricted to the
    interior subspaces. When an MCMC config is given, a sampler runs
    from the optimum and per-parameter marginal histograms for
    [x y z r] are attached.
    """
    recs = problem.records
    n_r = len(recs)
    sensors = {r.sensor_id for r in recs.records}
    if n_r == 0:
        return InversionSolution(status=STATUS_NO_RECORDS, klass=problem.klass)
    if n_r < problem.min_records or len(sensors) < problem.min_sensors:
        return InversionSolution(
            status=STATUS_INSUFFICIENT,
            n_records=n_r,
            n_sensors=len(sensors),
            klass=problem.klass,
            diagnostics=[f"need at least {problem.min_records} records from {problem.min_sensors} sensor(s)"],
        )
    if recs.weights.size != n_r:
        weight_records(recs)

    klass = problem.klass
    if klass in ("A", "B"):
        lb, ub = problem.effective_bounds()
        spec = VariableSpec(kinds=["continuous"] * 4, lower=lb[:4], upper=ub[:4])
        objective = lambda x: _direct_objective(x, problem)
        ga = miga_minimize(_direct_objective_batch(problem), spec, ga_config, batch=True)
        best_x = _polish(objective, ga.best_x, lb[:4], ub[:4], polish_maxfev)
        x, y, z, r = (float(v) for v in best_x)
        b = problem.site.subspace_index_of((x, y)) or 1
        best = SourceCandidate(x, y, z, r)
    else:
        n_b = problem.site.n_boxes
        # The master box stays out of the index search: attributing the
        # whole site is not an answer when subspaces are declared.
        lo5 = np.append(problem.site.master.lb[:4], 2.0 if n_b > 1 else 1.0)
        hi5 = np.append(problem.site.master.ub[:4], float(n_b))
        spec = VariableSpec(kinds=["continuous"] * 4 + ["integer"], lower=lo5, upper=hi5)
        objective = lambda v: penalized_objective(v, problem)
        ga = miga_minimize(objective, spec, ga_config)
        b5 = ga.best_x[4]
        v4 = _polish(lambda v: objective(np.append(v, b5)), ga.best_x[:4], lo5[:4], hi5[:4], polish_maxfev)
        best_v = np.append(v4, b5)
        best, b, _ = transform_variables(best_v, problem.site)

    f_best = objective_wmse(best.as_array(), recs)
    w_dir, w_spd, w_stab, pos, c_obs = recs.as_arrays()
    pred = predict_ppm_records(best.x, best.y, best.z, best.r, pos, w_dir, w_spd, w_stab)
    sol = InversionSolution(
        status=STATUS_OK,
        best=best,
        b=b,
        objective=f_best,
        residuals=np.column_stack([c_obs, pred]),
        n_records=n_r,
        n_sensors=len(sensors),
        klass=klass,
    )

    if mcmc_config is not None:
        start = best_x if klass in ("A", "B") else best_v
        mc = mcmc_sample(objective, start, spec, mcmc_config)
        sol.acceptance_rate = mc.acceptance_rate
        sol.diagnostics.extend(mc.diagnostics)
        if klass in ("A", "B"):
            lb, ub = problem.effective_bounds()
            sol.marginals = _marginals_from_samples(mc.samples, lb[:4], ub[:4], mcmc_config.bins)
        else:
            xs = np.array([transform_variables(vv, problem.site)[0].as_array() for vv in mc.samples])
            sol.marginals = _marginals_from_samples(xs, problem.site.master.lb[:4], problem.site.master.ub[:4], mcmc_config.bins)
    return sol


# --- Moving-window monitoring -------------------------------------------

STATUS_NONE = "none"
STATUS_SUSPECTED = "suspected"
STATUS_VALIDATED = "validated"
STATUS_ENDED = "ended"


@dataclass
class MonitoringConfig:
    window_s: float = 3600.0
    step_s: float = 600.0
    record_window_s: float = 300.0
    conc_threshold: float = 5.0
    max_wind: float = 12.0
    background: float | None = None
    confirm_steps: int = 3
    end_steps: int = 3
    min_records: int = DEFAULT_MIN_RECORDS
    min_sensors: int = DEFAULT_MIN_SENSORS
    gamma: float = DEFAULT_GAMMA
    use_cones: bool = True
    ga: GAConfig = field(default_factory=lambda: GAConfig(population=24, generations=40))
    mcmc: MCMCConfig | None = None


@dataclass
class MonitoringState:
    """Rolling buffers plus the leak lifecycle position.

    Single-writer: monitor_step mutates this in place and must not be
    called concurrently for the same state.
    """

    config: MonitoringConfig
    status: str = STATUS_NONE
    t_now: float | None = None
    leak_start: float | None = None
    leak_end: float | None = None
    attributed: int | None = None
    confirm_streak: int = 0
    empty_streak: int = 0
    episode_start: float | None = None
    last_ingested: float = -np.inf
    stream_t: dict[str, list[float]] = field(default_factory=dict)
    stream_c: dict[str, list[float]] = field(default_factory=dict)
    positions: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    weather_rows: list[tuple[float, float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        """Full checkpoint: lifecycle position plus rolling buffers."""
        return {
            "status": self.status,
            "t_now": self.t_now,
            "leak_start": self.leak_start,
            "leak_end": self.leak_end,
            "attributed": self.attributed,
            "confirm_streak": self.confirm_streak,
            "empty_streak": self.empty_streak,
            "episode_start": self.episode_start,
            "last_ingested": self.last_ingested if np.isfinite(self.last_ingested) else None,
            "stream_t": {k: list(v) for k, v in self.stream_t.items()},
            "stream_c": {k: list(v) for k, v in self.stream_c.items()},
            "positions": {k: list(v) for k, v in self.positions.items()},
            "weather_rows": [list(r) for r in self.weather_rows],
        }

    @classmethod
    def from_dict(cls, config: MonitoringConfig, d: dict[str, Any]) -> "MonitoringState":
        last = d.get("last_ingested")
        state = cls(
            config=config,
            status=d.get("status", STATUS_NONE),
            t_now=d.get("t_now"),
            leak_start=d.get("leak_start"),
            leak_end=d.get("leak_end"),
            attributed=d.get("attributed"),
            confirm_streak=int(d.get("confirm_streak", 0)),
            empty_streak=int(d.get("empty_streak", 0)),
            episode_start=d.get("episode_start"),
            last_ingested=-np.inf if last is None else float(last),
        )
        state.stream_t = {k: [float(x) for x in v] for k, v in d.get("stream_t", {}).items()}
        state.stream_c = {k: [float(x) for x in v] for k, v in d.get("stream_c", {}).items()}
        state.positions = {k: tuple(float(x) for x in v) for k, v in d.get("positions", {}).items()}
        state.weather_rows = [tuple(float(x) for x in r) for r in d.get("weather_rows", [])]
        return state


def _ingest(state: MonitoringState, streams: list[SensorStream], weather: WeatherSeries) -> bool:
    new_min = np.inf
    for s in streams:
        if s.t.size:
            new_min = min(new_min, float(s.t[0]))
    if weather.t.size:
        new_min = min(new_min, float(weather.t[0]))
    if new_min < state.last_ingested:
        return False
    for s in streams:
        state.positions[s.sensor_id] = s.position
        state.stream_t.setdefault(s.sensor_id, []).extend(s.t.tolist())
        state.stream_c.setdefault(s.sensor_id, []).extend(s.c.tolist())
        if s.t.size:
            state.last_ingested = max(state.last_ingested, float(s.t[-1]))
    for i in range(weather.t.size):
        state.weather_rows.append(
            (float(weather.t[i]), float(weather.w_dir[i]), float(weather.w_spd[i]), float(weather.solar[i]))
        )
        state.last_ingested = max(state.last_ingested, float(weather.t[i]))
    return True


def _window_view(state: MonitoringState, t_lo: float, t_hi: float):
    streams = []
    for sid, ts in state.stream_t.items():
        t = np.asarray(ts)
        mask = (t >= t_lo) & (t < t_hi)
        if mask.any():
            streams.append(
                SensorStream(
                    sensor_id=sid,
                    position=state.positions[sid],
                    t=t[mask],
                    c=np.asarray(state.stream_c[sid])[mask],
                )
            )
    wr = np.asarray(state.weather_rows, dtype=float).reshape(-1, 4)
    wmask = (wr[:, 0] >= t_lo) & (wr[:, 0] < t_hi)
    weather = WeatherSeries(t=wr[wmask, 0], w_dir=wr[wmask, 1], w_spd=wr[wmask, 2], solar=wr[wmask, 3])
    return streams, weather


def _trim_buffers(state: MonitoringState, keep_from: float) -> None:
    for sid in list(state.stream_t):
        t = np.asarray(state.stream_t[sid])
        mask = t >= keep_from
        state.stream_t[sid] = t[mask].tolist()
        state.stream_c[sid] = np.asarray(state.stream_c[sid])[mask].tolist()
    wr = np.asarray(state.weather_rows, dtype=float).reshape(-1, 4)
    state.weather_rows = [tuple(row) for row in wr[wr[:, 0] >= keep_from]]


def monitor_step(
    state: MonitoringState,
    streams: list[SensorStream],
    weather: WeatherSeries,
    site: SiteSpec,
) -> list[dict[str, Any]]:
    """Ingest one batch, advance the window by one step, update the FSM.

    Returns the events emitted this step. Out-of-order batches are
    rejected whole with a diagnostic event and no state change.
    """
    cfg = state.config
    events: list[dict[str, Any]] = []
    if not _ingest(state, streams, weather):
        events.append({"type": "rejected_batch", "t": state.t_now, "reason": "timestamps precede ingested data"})
        return events

    if state.t_now is None:
        state.t_now = state.last_ingested if np.isfinite(state.last_ingested) else 0.0
    else:
        state.t_now += cfg.step_s

    t_hi = state.t_now
    t_lo = t_hi - cfg.window_s
    win_streams, win_weather = _window_view(state, t_lo, t_hi)
    recs = generate_records(
        win_streams,
        win_weather,
        t_w=cfg.record_window_s,
        conc_threshold=cfg.conc_threshold,
        max_wind=cfg.max_wind,
        background=cfg.background,
    )
    n_r = len(recs)

    if n_r > 0:
        state.empty_streak = 0
        if state.status == STATUS_NONE:
            state.status = STATUS_SUSPECTED
            state.leak_start = min(r.t_start for r in recs.records)
            state.episode_start = state.leak_start
            state.leak_end = None
            state.confirm_streak = 0
            state.attributed = None
            events.append({"type": "suspected", "t": t_hi, "leak_start": state.leak_start})
        if state.status == STATUS_SUSPECTED:
            sol = _monitor_invert(state, site, recs)
            if sol is not None and sol.status == STATUS_OK:
                if sol.b == state.attributed:
                    state.confirm_streak += 1
                else:
                    state.attributed = sol.b
                    state.confirm_streak = 1
                if state.confirm_streak >= cfg.confirm_steps:
                    state.status = STATUS_VALIDATED
                    events.append(
                        {
                            "type": "validated",
                            "t": t_hi,
                            "leak_start": state.leak_start,
                            "subspace": sol.b,
                            "solution": sol.to_dict().get("solution"),
                        }
                    )
    else:
        if state.status in (STATUS_SUSPECTED, STATUS_VALIDATED):
            state.empty_streak += 1
            if state.empty_streak >= cfg.end_steps:
                if state.status == STATUS_VALIDATED:
                    state.status = STATUS_ENDED
                    state.leak_end = t_hi - cfg.end_steps * cfg.step_s
                    events.append(
                        {"type": "ended", "t": t_hi, "leak_start": state.leak_start, "leak_end": state.leak_end}
                    )
                    events.append(_final_inversion_event(state, site))
                else:
                    events.append({"type": "dismissed", "t": t_hi, "leak_start": state.leak_start})
                state.status = STATUS_NONE
                state.leak_start = None
                state.episode_start = None
                state.attributed = None
                state.confirm_streak = 0
                state.empty_streak = 0

    if state.status == STATUS_NONE:
        _trim_buffers(state, t_hi - cfg.window_s - 86400.0)
    return events


def _monitor_invert(state: MonitoringState, site: SiteSpec, recs: RecordSet) -> InversionSolution | None:
    cfg = state.config
    if len(recs) < cfg.min_records:
        return None
    cones = None
    if cfg.use_cones:
        t_hi = state.t_now
        streams, weather = _window_view(state, t_hi - cfg.window_s, t_hi)
        cones = extract_cones(
            streams,
            weather,
            active_threshold=cfg.conc_threshold,
            background=cfg.background,
            master=site.master,
        )
    problem = InversionProblem(
        records=recs,
        site=site,
        cones=cones,
        gamma=cfg.gamma,
        min_records=cfg.min_records,
        min_sensors=cfg.min_sensors,
    )
    return invert(problem, cfg.ga, None)


def _final_inversion_event(state: MonitoringState, site: SiteSpec) -> dict[str, Any]:
    """Whole-episode re-inversion over the consolidated record set."""
    cfg = state.config
    lo = (state.episode_start or 0.0) - cfg.record_window_s
    hi = (state.leak_end or state.t_now or 0.0) + cfg.record_window_s
    streams, weather = _window_view(state, lo, hi)
    recs = generate_records(
        streams,
        weather,
        t_w=cfg.record_window_s,
        conc_threshold=cfg.conc_threshold,
        max_wind=cfg.max_wind,
        background=cfg.background,
    )
    sol = None
    if len(recs) >= cfg.min_records:
        cones = None
        if cfg.use_cones:
            cones = extract_cones(
                streams,
                weather,
                active_threshold=cfg.conc_threshold,
                background=cfg.background,
                master=site.master,
            )
        problem = InversionProblem(
            records=recs,
            site=site,
            cones=cones,
            gamma=cfg.gamma,
            min_records=cfg.min_records,
            min_sensors=cfg.min_sensors,
        )
        sol = invert(problem, cfg.ga, cfg.mcmc)
    return {
        "type": "final_inversion",
        "t": state.t_now,
        "leak_start": state.leak_start,
        "leak_end": state.leak_end,
        "n_records": len(recs),
        "result": sol.to_dict() if sol is not None else None,
    }
