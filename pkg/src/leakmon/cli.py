"""Command-line client for the monitoring service.

Commands package local files into API requests, run them against an
in-process service instance (or a remote one via ``--server``) and write
the responses back to disk. Every run directory gets a manifest with the
resolved config hash, master seed and package version; execution-only
settings (threads, paths) stay out of the hash so reruns are comparable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import httpx
import numpy as np

from . import __version__, io as iomod
from .config import ConfigError, load_config, validate_blocks
from .records import WeatherSeries

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

EXECUTION_KEYS = ("threads", "out")


class ClientError(RuntimeError):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


class _InProcessClient:
    """Synchronous shim over the ASGI app (no socket, same interface)."""

    def __init__(self, app) -> None:
        self._app = app

    def __enter__(self) -> "_InProcessClient":
        return self

    def __exit__(self, *exc) -> bool:
        return False

    def post(self, path: str, json: dict) -> httpx.Response:
        import asyncio

        async def go() -> httpx.Response:
            transport = httpx.ASGITransport(app=self._app)
            async with httpx.AsyncClient(transport=transport, base_url="http://service", timeout=None) as client:
                return await client.post(path, json=json)

        return asyncio.run(go())


def _client(args):
    if args.server:
        return httpx.Client(base_url=args.server, timeout=600.0)
    from .service.app import app  # deferred: keeps --help fast

    return _InProcessClient(app)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise ClientError(f"service unreachable: {exc}") from None
    if resp.status_code == 422:
        raise ClientError(_detail(resp), EXIT_CONFIG)
    if resp.status_code >= 400:
        raise ClientError(_detail(resp))
    return resp.json()


def _detail(resp: httpx.Response) -> str:
    try:
        return str(resp.json().get("detail", resp.text))
    except ValueError:
        return resp.text


def _resolved_config(args) -> dict:
    if not args.config:
        raise ClientError("--config is required", EXIT_CONFIG)
    cfg = load_config(args.config)
    validate_blocks(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        raise ClientError("a master seed is required (config 'seed' or --seed)", EXIT_CONFIG)
    if args.out:
        cfg["out"] = args.out
    if args.threads:
        cfg["threads"] = args.threads
    return cfg


def _out_dir(cfg: dict) -> str:
    out = cfg.get("out") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _hashable(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}


def _write_manifest(command: str, cfg: dict, out: str, outputs: list[str]) -> None:
    doc = iomod.manifest(command, _hashable(cfg), int(cfg["seed"]), __version__)
    doc["outputs"] = sorted(outputs)
    iomod.write_json(os.path.join(out, "manifest.json"), doc)


def _load_site_doc(cfg: dict) -> dict:
    path = cfg.get("site")
    if not path:
        raise ClientError("config 'site' path is required for this command", EXIT_CONFIG)
    if not os.path.exists(path):
        raise ClientError(f"site file not found: {path}", EXIT_CONFIG)
    try:
        return iomod.read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ClientError(f"site file {path}: {exc}", EXIT_CONFIG) from None


def _weather_payload(w: WeatherSeries) -> dict:
    return {"t": w.t.tolist(), "w_dir": w.w_dir.tolist(), "w_spd": w.w_spd.tolist(), "solar": w.solar.tolist()}


def _weather_from_payload(d: dict) -> WeatherSeries:
    return WeatherSeries(
        t=np.asarray(d["t"], dtype=float),
        w_dir=np.asarray(d["w_dir"], dtype=float),
        w_spd=np.asarray(d["w_spd"], dtype=float),
        solar=np.asarray(d["solar"], dtype=float),
    )


def _read_input_csvs(cfg: dict, block: dict) -> tuple[list, WeatherSeries]:
    for key in ("sensors_csv", "weather_csv"):
        path = block.get(key)
        if not path:
            raise ClientError(f"config block needs {key!r}", EXIT_CONFIG)
        if not os.path.exists(path):
            raise ClientError(f"input file not found: {path}", EXIT_CONFIG)
    site = iomod.site_from_dict(_load_site_doc(cfg))
    try:
        streams = iomod.read_sensor_csv(block["sensors_csv"], iomod.sensor_positions(site))
        weather = iomod.read_weather_csv(block["weather_csv"])
    except iomod.FormatError as exc:
        raise ClientError(str(exc), EXIT_CONFIG) from None
    return streams, weather


def _stream_payloads(streams) -> list[dict]:
    return [{"sensor_id": s.sensor_id, "t": s.t.tolist(), "ppm": s.c.tolist()} for s in streams]


def _record_params(block: dict) -> dict:
    mapping = {
        "window_s": "window_s",
        "conc_threshold": "conc_threshold",
        "max_wind": "max_wind",
        "background": "background",
        "use_cones": "use_cones",
        "min_records": "min_records",
        "min_sensors": "min_sensors",
        "gamma": "gamma",
    }
    return {dst: block[src] for src, dst in mapping.items() if src in block}


def _solver_block(cfg: dict) -> dict:
    block = dict(cfg.get("solver") or {})
    if cfg.get("threads"):
        block["workers"] = int(cfg["threads"])
    return block


# --- commands ------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _resolved_config(args)
    sim = cfg.get("simulate")
    if not sim or "source" not in sim:
        raise ClientError("config 'simulate.source' is required", EXIT_CONFIG)
    out = _out_dir(cfg)
    wind_block = dict(sim.get("wind") or {})
    t0_iso = sim.get("t0_iso", iomod.DEFAULT_EPOCH_ISO)
    wind_block.setdefault("t0", iomod.parse_iso8601(t0_iso))
    payload = {
        "site": _load_site_doc(cfg),
        "source": sim["source"],
        "wind": wind_block,
        "noise_sigma": sim.get("noise_sigma", 0.0),
        "background": sim.get("background", 0.0),
        "seed": int(cfg["seed"]),
    }
    with _client(args) as client:
        resp = _post(client, "/simulate", payload)
    weather = _weather_from_payload(resp["weather"])
    iomod.write_weather_csv(os.path.join(out, "weather.csv"), weather)
    rows = []
    for s in resp["streams"]:
        for t, ppm in zip(s["t"], s["ppm"]):
            rows.append((float(t), s["sensor_id"], float(ppm)))
    rows.sort(key=lambda r: (r[1], r[0]))
    iomod.write_csv(
        os.path.join(out, "sensors.csv"),
        iomod.SENSOR_HEADER,
        [[iomod.format_iso8601(t), sid, ppm] for t, sid, ppm in rows],
    )
    _write_manifest("simulate", cfg, out, ["weather.csv", "sensors.csv"])
    print(f"simulate: {len(resp['streams'])} stream(s), {weather.t.size} weather samples -> {out}")
    return EXIT_OK


def cmd_wind(args) -> int:
    cfg = _resolved_config(args)
    block = dict(cfg.get("wind") or {})
    model = args.model or block.get("model", "synthetic")
    count = args.count or int(block.get("count", 1))
    rose_path = args.rose or block.get("rose")
    rose_csv = None
    if model == "conditioned":
        if not rose_path:
            raise ClientError("conditioned model requires --rose or config wind.rose", EXIT_CONFIG)
        if not os.path.exists(rose_path):
            raise ClientError(f"rose file not found: {rose_path}", EXIT_CONFIG)
        with open(rose_path, encoding="utf-8") as fh:
            rose_csv = fh.read()
    wind_fields = {k: v for k, v in block.items() if k not in ("model", "rose", "count")}
    t0_iso = cfg.get("simulate", {}).get("t0_iso") if cfg.get("simulate") else None
    wind_fields.setdefault("t0", iomod.parse_iso8601(t0_iso or iomod.DEFAULT_EPOCH_ISO))
    out = _out_dir(cfg)
    payload = {
        "model": model,
        "rose_csv": rose_csv,
        "count": count,
        "config": wind_fields,
        "seed": int(cfg["seed"]),
    }
    with _client(args) as client:
        resp = _post(client, "/wind", payload)
    names = []
    for i, real in enumerate(resp["realizations"], start=1):
        name = f"wind_{i:03d}.csv"
        iomod.write_weather_csv(os.path.join(out, name), _weather_from_payload(real))
        names.append(name)
    _write_manifest("wind", cfg, out, names)
    print(f"wind: {len(names)} realization(s) -> {out}")
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _resolved_config(args)
    block = cfg.get("invert") or {}
    streams, weather = _read_input_csvs(cfg, block)
    out = _out_dir(cfg)
    payload = {
        "site": _load_site_doc(cfg),
        "streams": _stream_payloads(streams),
        "weather": _weather_payload(weather),
        "params": _record_params(block),
        "solver": _solver_block(cfg),
        "mcmc": cfg.get("mcmc"),
        "seed": int(cfg["seed"]),
    }
    with _client(args) as client:
        report = _post(client, "/invert", payload)
    residuals = report.pop("residuals", [])
    iomod.write_json(os.path.join(out, "report.json"), report)
    iomod.write_csv(
        os.path.join(out, "residuals.csv"),
        iomod.RESIDUAL_HEADER,
        [[i, float(obs), float(pred)] for i, (obs, pred) in enumerate(residuals)],
    )
    _write_manifest("invert", cfg, out, ["report.json", "residuals.csv"])
    sol = report.get("solution")
    if sol:
        print(
            "invert: status=%s x=%.2f y=%.2f z=%.2f rate=%.2f kg/h F=%.4g"
            % (report["status"], sol["x"], sol["y"], sol["z"], sol["rate_kg_h"], sol["objective"])
        )
    else:
        print(f"invert: status={report['status']}")
    return EXIT_OK


def _batches(streams, weather, step_s: float):
    """Split replay data into consecutive step-sized batches."""
    t_all = [float(t) for s in streams for t in s.t] + [float(t) for t in weather.t]
    if not t_all:
        return
    t0, t1 = min(t_all), max(t_all)
    k = 0
    while t0 + k * step_s <= t1:
        lo, hi = t0 + k * step_s, t0 + (k + 1) * step_s
        sub = []
        for s in streams:
            m = (s.t >= lo) & (s.t < hi)
            if m.any():
                sub.append(
                    {"sensor_id": s.sensor_id, "t": s.t[m].tolist(), "ppm": s.c[m].tolist()}
                )
        wm = (weather.t >= lo) & (weather.t < hi)
        wsub = {
            "t": weather.t[wm].tolist(),
            "w_dir": weather.w_dir[wm].tolist(),
            "w_spd": weather.w_spd[wm].tolist(),
            "solar": weather.solar[wm].tolist(),
        }
        if sub or wm.any():
            yield lo, sub, wsub
        k += 1


def cmd_monitor(args) -> int:
    cfg = _resolved_config(args)
    block = cfg.get("monitor") or {}
    streams, weather = _read_input_csvs(cfg, block)
    out = _out_dir(cfg)
    site_doc = _load_site_doc(cfg)
    step_s = float(block.get("step_s", 600.0))
    checkpoint = block.get("checkpoint") or os.path.join(out, "monitor_state.json")
    events_path = os.path.join(out, "events.jsonl")

    state = None
    resumed = False
    if os.path.exists(checkpoint):
        state = iomod.read_json(checkpoint)
        resumed = True
    if not resumed and os.path.exists(events_path):
        os.remove(events_path)

    mon_block = {k: v for k, v in block.items() if k not in ("sensors_csv", "weather_csv", "checkpoint")}
    last = state.get("last_ingested") if state else None
    n_events = 0
    with _client(args) as client:
        for lo, sub, wsub in _batches(streams, weather, step_s):
            if last is not None and lo <= last:
                continue  # already ingested before the checkpoint
            payload = {
                "site": site_doc,
                "state": state,
                "config": mon_block,
                "solver": cfg.get("solver"),
                "mcmc": cfg.get("mcmc"),
                "streams": sub,
                "weather": wsub,
                "seed": int(cfg["seed"]),
            }
            resp = _post(client, "/monitor/step", payload)
            state = resp["state"]
            iomod.write_json(checkpoint, state)
            for ev in resp["events"]:
                iomod.append_jsonl(events_path, ev)
                n_events += 1
    _write_manifest("monitor", cfg, out, ["events.jsonl", os.path.basename(checkpoint)])
    print(f"monitor: {n_events} event(s), state={state['status'] if state else 'none'} -> {events_path}")
    return EXIT_OK


def _placement_realizations(cfg: dict, args) -> list[dict]:
    pl = cfg.get("placement") or {}
    real = pl.get("realizations") or {}
    csvs = real.get("weather_csvs")
    if csvs:
        out = []
        for path in csvs:
            if not os.path.exists(path):
                raise ClientError(f"weather realization not found: {path}", EXIT_CONFIG)
            out.append(_weather_payload(iomod.read_weather_csv(path)))
        return out
    model = real.get("model", "synthetic")
    count = int(real.get("count", 3))
    rose_csv = None
    if model == "conditioned":
        rose_path = real.get("rose")
        if not rose_path or not os.path.exists(rose_path):
            raise ClientError(f"rose file not found: {rose_path}", EXIT_CONFIG)
        with open(rose_path, encoding="utf-8") as fh:
            rose_csv = fh.read()
    fields = {k: v for k, v in real.items() if k not in ("model", "rose", "count", "weather_csvs")}
    payload = {"model": model, "rose_csv": rose_csv, "count": count, "config": fields, "seed": int(cfg["seed"])}
    with _client(args) as client:
        resp = _post(client, "/wind", payload)
    return resp["realizations"]


def cmd_place(args) -> int:
    cfg = _resolved_config(args)
    pl = dict(cfg.get("placement") or {})
    if args.grow:
        try:
            lo, hi = args.grow.split("..")
            pl["grow"] = [int(lo), int(hi)]
        except ValueError:
            raise ClientError(f"--grow expects A..B, got {args.grow!r}", EXIT_CONFIG) from None
    realizations = _placement_realizations(cfg, args)
    out = _out_dir(cfg)
    # A placement-local solver block outranks the shared one; --threads
    # still applies on top of either.
    solver = pl.pop("solver", None) or _solver_block(cfg)
    if cfg.get("threads"):
        solver = dict(solver, workers=int(cfg["threads"]))
    payload = {
        "site": _load_site_doc(cfg),
        "realizations": realizations,
        "placement": {k: v for k, v in pl.items() if k != "realizations"},
        "coverage": {
            k: v
            for k, v in (cfg.get("coverage") or {}).items()
            if k not in ("weather_csv", "grid", "z_trial", "rate_trial")
        },
        "solver": solver,
        "seed": int(cfg["seed"]),
    }
    with _client(args) as client:
        result = _post(client, "/place", payload)
    outputs = ["placement.json"]
    iomod.write_json(os.path.join(out, "placement.json"), result)
    if "frontier" in result:
        rows = [[r["n_s"], float(r["S"])] for r in result["frontier"]]
        iomod.write_csv(os.path.join(out, "frontier.csv"), ["n_s", "S"], rows)
        outputs.append("frontier.csv")
        best = result["best"]
    else:
        trace = result.get("trace_S", [])
        best_tr = result.get("trace_best_feasible_S", [])
        rows = [[i, float(s), float(b)] for i, (s, b) in enumerate(zip(trace, best_tr))]
        iomod.write_csv(os.path.join(out, "trace.csv"), iomod.TRACE_HEADER, rows)
        outputs.append("trace.csv")
        best = result
    _write_manifest("place", cfg, out, outputs)
    print(f"place: n_s={best['n_s']} S={best['S']:.3f} feasible={best['feasible']} -> {out}")
    return EXIT_OK


def cmd_coverage_map(args) -> int:
    cfg = _resolved_config(args)
    block = dict(cfg.get("coverage") or {})
    weather_csv = block.get("weather_csv")
    if not weather_csv:
        raise ClientError("config 'coverage.weather_csv' is required", EXIT_CONFIG)
    if not os.path.exists(weather_csv):
        raise ClientError(f"weather file not found: {weather_csv}", EXIT_CONFIG)
    grid = block.get("grid") or {}
    out = _out_dir(cfg)
    payload = {
        "site": _load_site_doc(cfg),
        "realization": _weather_payload(iomod.read_weather_csv(weather_csv)),
        "coverage": {
            k: v for k, v in block.items() if k not in ("weather_csv", "grid", "z_trial", "rate_trial")
        },
        "nx": int(grid.get("nx", 20)),
        "ny": int(grid.get("ny", 20)),
        "z_trial": float(block.get("z_trial", 2.0)),
        "rate_trial": float(block.get("rate_trial", 5.0)),
        "seed": int(cfg["seed"]),
    }
    with _client(args) as client:
        report = _post(client, "/coverage-map", payload)
    rows = [[p["x"], p["y"], p["gap"], p["category"]] for p in report["points"]]
    iomod.write_csv(os.path.join(out, "coverage_map.csv"), iomod.COVERAGE_MAP_HEADER, rows)
    iomod.write_json(
        os.path.join(out, "coverage.json"),
        {k: v for k, v in report.items() if k != "points"},
    )
    _write_manifest("coverage-map", cfg, out, ["coverage_map.csv", "coverage.json"])
    print(f"coverage-map: C={report['C']:.2f}% over {len(rows)} cells -> {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leakmon", description="Methane leak monitoring toolkit")
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--threads", type=int, help="solver worker count")
    parser.add_argument("--server", help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", help="synthesize sensor + weather CSVs").set_defaults(fn=cmd_simulate)

    p_wind = sub.add_parser("wind", help="generate wind realizations")
    p_wind.add_argument("--model", choices=["synthetic", "conditioned"])
    p_wind.add_argument("--rose", help="wind rose CSV (conditioned model)")
    p_wind.add_argument("--count", type=int, help="number of realizations")
    p_wind.set_defaults(fn=cmd_wind)

    sub.add_parser("invert", help="run a source inversion").set_defaults(fn=cmd_invert)
    sub.add_parser("monitor", help="replay data through the monitoring loop").set_defaults(fn=cmd_monitor)

    p_place = sub.add_parser("place", help="optimize sensor placement")
    p_place.add_argument("--grow", help="sensor count range A..B")
    p_place.set_defaults(fn=cmd_place)

    sub.add_parser("coverage-map", help="gridded coverage evaluation").set_defaults(fn=cmd_coverage_map)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep the contract's exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
