"""File formats: sensor/weather CSV, site JSON, reports and manifests.

Everything on disk is plain CSV or JSON so any plotting tool can consume
it. Timestamps are ISO 8601 in files and float POSIX seconds in memory;
all numeric formatting goes through ``repr`` so a fixed (input, seed)
pair always produces byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from datetime import datetime, timezone
from typing import Any

import numpy as np

from .geometry import BoxRegion, SiteSpec
from .records import SensorStream, WeatherSeries

SENSOR_HEADER = ["timestamp_iso8601", "sensor_id", "ppm"]
WEATHER_HEADER = ["timestamp_iso8601", "wind_dir_deg_math", "wind_speed_ms", "solar_wm2"]
COVERAGE_MAP_HEADER = ["x", "y", "gap", "category"]
RESIDUAL_HEADER = ["record_index", "m_obs", "m_pred"]
TRACE_HEADER = ["evaluation", "S", "best_feasible_S"]

DEFAULT_EPOCH_ISO = "2026-01-01T00:00:00+00:00"


class FormatError(ValueError):
    """Malformed input file."""


# --- timestamps ----------------------------------------------------------

def parse_iso8601(text: str) -> float:
    """ISO 8601 string -> float POSIX seconds (naive times read as UTC)."""
    try:
        dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise FormatError(f"bad timestamp {text!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_iso8601(t: float) -> str:
    return datetime.fromtimestamp(float(t), tz=timezone.utc).isoformat()


# --- sensor / weather CSV ------------------------------------------------

def _check_header(row: list[str], expected: list[str], path: str) -> None:
    if [c.strip() for c in row] != expected:
        raise FormatError(f"{path}: expected header {','.join(expected)}, got {','.join(row)}")


def sensor_csv_text(streams: list[SensorStream]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SENSOR_HEADER)
    for s in streams:
        for t, c in zip(s.t, s.c):
            w.writerow([format_iso8601(t), s.sensor_id, repr(float(c))])
    return buf.getvalue()


def write_sensor_csv(path: str, streams: list[SensorStream]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(sensor_csv_text(streams))


def read_sensor_csv(path: str, positions: dict[str, tuple[float, float, float]]) -> list[SensorStream]:
    """Load sensor readings; positions come from the site file's sensor list.

    Sensor ids present in the CSV but missing from the site raise, since
    a stream without coordinates cannot enter the forward model.
    """
    by_id: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise FormatError(f"{path}: empty file")
        _check_header(header, SENSOR_HEADER, path)
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{ln}: expected 3 columns, got {len(row)}")
            t, sid, ppm = row
            by_id.setdefault(sid, []).append((parse_iso8601(t), float(ppm)))
    streams = []
    for sid in sorted(by_id):
        if sid not in positions:
            raise FormatError(f"{path}: sensor {sid!r} has no position in the site file")
        pairs = sorted(by_id[sid])
        streams.append(
            SensorStream(
                sensor_id=sid,
                position=positions[sid],
                t=np.array([p[0] for p in pairs]),
                c=np.array([p[1] for p in pairs]),
            )
        )
    return streams


def weather_csv_text(weather: WeatherSeries) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(WEATHER_HEADER)
    for i in range(weather.t.size):
        w.writerow(
            [
                format_iso8601(weather.t[i]),
                repr(float(weather.w_dir[i])),
                repr(float(weather.w_spd[i])),
                repr(float(weather.solar[i])),
            ]
        )
    return buf.getvalue()


def write_weather_csv(path: str, weather: WeatherSeries) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(weather_csv_text(weather))


def read_weather_csv(path: str) -> WeatherSeries:
    t, wd, ws, sol = [], [], [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            raise FormatError(f"{path}: empty file")
        _check_header(header, WEATHER_HEADER, path)
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{ln}: expected 4 columns, got {len(row)}")
            t.append(parse_iso8601(row[0]))
            wd.append(float(row[1]))
            ws.append(float(row[2]))
            sol.append(float(row[3]))
    order = np.argsort(np.array(t), kind="stable")
    return WeatherSeries(
        t=np.array(t)[order],
        w_dir=np.array(wd)[order],
        w_spd=np.array(ws)[order],
        solar=np.array(sol)[order],
    )


# --- site JSON -----------------------------------------------------------

def _region_from_dict(d: dict[str, Any], name: str) -> BoxRegion:
    if "polygon" not in d:
        raise FormatError(f"region {name}: missing 'polygon'")
    feasible = d.get("feasible", "interior")
    if feasible not in ("interior", "exterior"):
        raise FormatError(f"region {name}: feasible must be 'interior' or 'exterior'")
    kwargs: dict[str, Any] = {"feasible_side": feasible, "name": d.get("name", name)}
    if "bounds" in d:
        b = d["bounds"]
        lb, ub = list(map(float, b["lb"])), list(map(float, b["ub"]))
        if len(lb) != 5 or len(ub) != 5:
            raise FormatError(f"region {name}: bounds lb/ub must have 5 entries")
        kwargs["z_bounds"] = (lb[2], ub[2])
        kwargs["rate_bounds"] = (lb[3], ub[3])
        kwargs["index_bounds"] = (lb[4], ub[4])
    if "epts" in d:
        kwargs["epts"] = d["epts"]
    return BoxRegion.from_polygon(d["polygon"], **kwargs)


def site_from_dict(doc: dict[str, Any]) -> SiteSpec:
    if "master" not in doc:
        raise FormatError("site file: missing 'master' region")
    master = _region_from_dict(doc["master"], "master")
    subspaces = [
        _region_from_dict(sd, f"subspace[{i}]") for i, sd in enumerate(doc.get("subspaces", []))
    ]
    zones = [_region_from_dict(zd, f"zone[{i}]") for i, zd in enumerate(doc.get("zones", []))]
    sensors = []
    for i, s in enumerate(doc.get("sensors", [])):
        for key in ("id", "x", "y", "z"):
            if key not in s:
                raise FormatError(f"site file: sensors[{i}] missing {key!r}")
        sensors.append({"id": str(s["id"]), "x": float(s["x"]), "y": float(s["y"]), "z": float(s["z"])})
    affine = doc.get("affine_to_gps")
    return SiteSpec(
        master=master,
        subspaces=subspaces,
        zones=zones,
        sensors=sensors,
        affine_to_gps=np.asarray(affine, dtype=float) if affine is not None else None,
    )


def site_to_dict(site: SiteSpec) -> dict[str, Any]:
    def region(r: BoxRegion) -> dict[str, Any]:
        d: dict[str, Any] = {
            "polygon": [[float(x), float(y)] for x, y in r.polygon],
            "bounds": {"lb": [float(v) for v in r.lb], "ub": [float(v) for v in r.ub]},
            "feasible": r.feasible_side,
        }
        if r.name:
            d["name"] = r.name
        if r.epts.size:
            d["epts"] = [[float(x), float(y)] for x, y in r.epts]
        return d

    doc: dict[str, Any] = {
        "master": region(site.master),
        "subspaces": [region(s) for s in site.subspaces],
        "zones": [region(z) for z in site.zones],
        "sensors": site.sensors,
    }
    if site.affine_to_gps is not None:
        doc["affine_to_gps"] = [[float(v) for v in row] for row in site.affine_to_gps]
    return doc


def load_site(path: str) -> SiteSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return site_from_dict(doc)


def save_site(path: str, site: SiteSpec) -> None:
    write_json(path, site_to_dict(site))


def sensor_positions(site: SiteSpec) -> dict[str, tuple[float, float, float]]:
    return {s["id"]: (s["x"], s["y"], s["z"]) for s in site.sensors}


# --- generic JSON / CSV helpers ------------------------------------------

def _plain(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def json_text(doc: Any) -> str:
    return json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n"


def write_json(path: str, doc: Any) -> None:
    with open(path, "w") as fh:
        fh.write(json_text(doc))


def read_json(path: str) -> Any:
    with open(path) as fh:
        return json.load(fh)


def csv_text(header: list[str], rows: list[list[Any]]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path: str, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))


def append_jsonl(path: str, event: dict[str, Any]) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(_plain(event), sort_keys=True) + "\n")


# --- manifest ------------------------------------------------------------

def config_hash(config: dict[str, Any]) -> str:
    """sha256 over the canonical JSON encoding of the resolved config."""
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def manifest(command: str, config: dict[str, Any], seed: int | None, version: str) -> dict[str, Any]:
    return {
        "command": command,
        "config_sha256": config_hash(config),
        "seed": seed,
        "version": version,
    }
