"""HTTP endpoints for simulation, inversion, monitoring and placement.

Each handler converts the JSON payload into core objects, runs the
corresponding workflow and returns plain JSON. No handler touches the
filesystem; determinism comes entirely from the seed in the request.
"""

from __future__ import annotations

from typing import Any

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, config as cfgmod, io as iomod
from ..cones import extract_cones
from ..coverage import EvaluationSet, coverage_map
from ..geometry import SiteSpec
from ..inversion import (
    InversionProblem,
    MonitoringState,
    invert,
    monitor_step,
)
from ..placement import (
    PlacementInfeasibleError,
    PlacementProblem,
    grow_sensor_count,
    optimize_placement,
)
from ..plume import CalmWindError, Source
from ..records import SensorStream, WeatherSeries, generate_records, weight_records
from ..wind import (
    conditioned_wind,
    parse_wind_rose_text,
    realization_seeds,
    synthesize_sensor_data,
    synthetic_wind,
)
from .schemas import (
    CoverageMapRequest,
    InvertRequest,
    MonitorStepRequest,
    PlaceRequest,
    SimulateRequest,
    WindRequest,
)

app = FastAPI(title="leakmon", version=__version__)


def _site(doc: dict[str, Any]) -> SiteSpec:
    try:
        return iomod.site_from_dict(doc)
    except (iomod.FormatError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=f"site: {exc}") from None


def _sensor_tuples(site: SiteSpec) -> list[tuple[str, float, float, float]]:
    if not site.sensors:
        raise HTTPException(status_code=422, detail="site: no sensors declared")
    return [(s["id"], s["x"], s["y"], s["z"]) for s in site.sensors]


def _weather(payload) -> WeatherSeries:
    try:
        return WeatherSeries(
            t=np.asarray(payload.t, dtype=float),
            w_dir=np.asarray(payload.w_dir, dtype=float),
            w_spd=np.asarray(payload.w_spd, dtype=float),
            solar=np.asarray(payload.solar, dtype=float),
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=f"weather: {exc}") from None


def _weather_out(w: WeatherSeries) -> dict[str, list[float]]:
    return {
        "t": w.t.tolist(),
        "w_dir": w.w_dir.tolist(),
        "w_spd": w.w_spd.tolist(),
        "solar": w.solar.tolist(),
    }


def _streams(payloads, site: SiteSpec) -> list[SensorStream]:
    positions = iomod.sensor_positions(site)
    out = []
    for p in payloads:
        if p.sensor_id not in positions:
            raise HTTPException(status_code=422, detail=f"stream {p.sensor_id!r} has no position in the site")
        try:
            out.append(
                SensorStream(
                    sensor_id=p.sensor_id,
                    position=positions[p.sensor_id],
                    t=np.asarray(p.t, dtype=float),
                    c=np.asarray(p.ppm, dtype=float),
                )
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=f"stream {p.sensor_id!r}: {exc}") from None
    return out


@app.get("/health")
def health() -> dict[str, str]:
    return {"status": "ok", "version": __version__}


@app.post("/simulate")
def simulate(req: SimulateRequest) -> dict[str, Any]:
    site = _site(req.site)
    sensors = _sensor_tuples(site)
    if req.weather is not None:
        weather = _weather(req.weather)
    else:
        # ConfigError covers unknown keys, bare ValueError bad field values
        try:
            wcfg = cfgmod.wind_model_config(req.wind, seed=req.seed)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        weather = synthetic_wind(wcfg)
    streams = synthesize_sensor_data(
        weather, Source(**req.source.model_dump()), sensors, req.noise_sigma, req.background, req.seed
    )
    return {
        "weather": _weather_out(weather),
        "streams": [{"sensor_id": s.sensor_id, "t": s.t.tolist(), "ppm": s.c.tolist()} for s in streams],
    }


@app.post("/wind")
def wind_realizations(req: WindRequest) -> dict[str, Any]:
    rose = None
    if req.model == "conditioned":
        if not req.rose_csv:
            raise HTTPException(status_code=422, detail="conditioned model requires rose_csv")
        try:
            rose = parse_wind_rose_text(req.rose_csv)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=f"rose: {exc}") from None
    if req.count < 1:
        raise HTTPException(status_code=422, detail="count must be >= 1")
    out = []
    for child in realization_seeds(req.seed, req.count):
        try:
            wcfg = cfgmod.wind_model_config(req.config, seed=child)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        series = synthetic_wind(wcfg) if rose is None else conditioned_wind(rose, wcfg)
        out.append(_weather_out(series))
    return {"realizations": out}


@app.post("/invert")
def invert_endpoint(req: InvertRequest) -> dict[str, Any]:
    site = _site(req.site)
    streams = _streams(req.streams, site)
    weather = _weather(req.weather)
    p = req.params
    try:
        recs = generate_records(
            streams,
            weather,
            t_w=p.window_s,
            conc_threshold=p.conc_threshold,
            max_wind=p.max_wind,
            background=p.background,
        )
    except CalmWindError as exc:
        # a data condition, not a malformed request
        raise HTTPException(status_code=400, detail=str(exc)) from None
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    cones = None
    cone_diag: list[dict[str, Any]] = []
    if p.use_cones and len(recs.records):
        cs = extract_cones(
            streams, weather, active_threshold=p.conc_threshold, background=p.background, master=site.master
        )
        cone_diag = [
            {
                "sensor_id": c.sensor_id,
                "apex": list(c.apex),
                "d_min": c.d_min,
                "d_mid": c.d_mid,
                "d_max": c.d_max,
                "width": c.width,
                "active_count": c.active_count,
                "mean_c": c.mean_c,
                "max_c": c.max_c,
            }
            for c in cs.cones
        ]
        if cs.cones:
            cones = cs
    if len(recs.records):
        weight_records(recs)
    try:
        problem = InversionProblem(
            records=recs,
            site=site,
            cones=cones,
            gamma=p.gamma,
            min_records=p.min_records,
            min_sensors=p.min_sensors,
        )
        ga = cfgmod.ga_config({"solver": req.solver}, seed=req.seed)
        mc = cfgmod.mcmc_config({"mcmc": req.mcmc}, seed=req.seed)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    sol = invert(problem, ga, mc)
    report = sol.to_dict()
    report["cones"] = cone_diag
    if sol.residuals is not None:
        report["residuals"] = [[float(a), float(b)] for a, b in sol.residuals]
    return report


@app.post("/monitor/step")
def monitor_step_endpoint(req: MonitorStepRequest) -> dict[str, Any]:
    site = _site(req.site)
    try:
        mon_cfg = cfgmod.monitoring_config(
            {"monitor": req.config, "solver": req.solver, "mcmc": req.mcmc}, seed=req.seed
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    if req.state is not None:
        state = MonitoringState.from_dict(mon_cfg, req.state)
    else:
        state = MonitoringState(config=mon_cfg)
    streams = _streams(req.streams, site)
    weather = (
        _weather(req.weather)
        if req.weather is not None
        else WeatherSeries(t=np.array([]), w_dir=np.array([]), w_spd=np.array([]), solar=np.array([]))
    )
    events = monitor_step(state, streams, weather, site)
    return {"state": state.to_dict(), "events": events}


def _evaluation_set(site: SiteSpec, spec: Any, z_trial: float, rate_trial: float) -> EvaluationSet:
    if spec in (None, "site"):
        return EvaluationSet(points=site.evaluation_points(), z_trial=z_trial, rate_trial=rate_trial)
    if isinstance(spec, dict) and "nx" in spec and "ny" in spec:
        nx, ny = int(spec["nx"]), int(spec["ny"])
        lb, ub = site.master.lb, site.master.ub
        xs = lb[0] + (np.arange(nx) + 0.5) * (ub[0] - lb[0]) / nx
        ys = lb[1] + (np.arange(ny) + 0.5) * (ub[1] - lb[1]) / ny
        gx, gy = np.meshgrid(xs, ys)
        return EvaluationSet(
            points=np.column_stack([gx.ravel(), gy.ravel()]), z_trial=z_trial, rate_trial=rate_trial
        )
    raise HTTPException(status_code=422, detail="placement.epts must be 'site' or {nx, ny}")


@app.post("/place")
def place(req: PlaceRequest) -> dict[str, Any]:
    site = _site(req.site)
    if not req.realizations:
        raise HTTPException(status_code=422, detail="at least one wind realization is required")
    realizations = [_weather(w) for w in req.realizations]
    pl = dict(req.placement)
    grow = pl.get("grow")
    try:
        cov = cfgmod.coverage_config({"coverage": req.coverage}, seed=req.seed)
        ga = cfgmod.ga_config({"solver": req.solver}, seed=req.seed)
        evaluation = _evaluation_set(
            site, pl.get("epts", "site"), float(pl.get("z_trial", 2.0)), float(pl.get("rate_trial", 5.0))
        )
        kwargs: dict[str, Any] = {}
        for key in ("d_min", "gamma", "phi", "tau", "sensor_z"):
            if key in pl:
                kwargs[key] = float(pl[key])
        problem = PlacementProblem(
            site=site,
            realizations=realizations,
            evaluation=evaluation,
            n_s=int(grow[0]) if grow else int(pl.get("n_s", 1)),
            coverage=cov,
            **kwargs,
        )
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    try:
        if grow:
            results = grow_sensor_count(
                problem, max_n=int(grow[1]), marginal_gain_threshold=float(pl.get("grow_threshold", 1.0)), ga_config=ga
            )
            return {"frontier": [r.to_dict() for r in results], "best": results[-1].to_dict()}
        result = optimize_placement(problem, ga)
    except PlacementInfeasibleError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None
    return result.to_dict()


@app.post("/coverage-map")
def coverage_map_endpoint(req: CoverageMapRequest) -> dict[str, Any]:
    site = _site(req.site)
    sensors = _sensor_tuples(site)
    weather = _weather(req.realization)
    try:
        cov = cfgmod.coverage_config({"coverage": req.coverage}, seed=req.seed)
        report = coverage_map(sensors, weather, site, cov, req.nx, req.ny, req.z_trial, req.rate_trial)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    return report.to_dict()
