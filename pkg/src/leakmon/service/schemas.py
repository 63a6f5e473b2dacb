"""Request and response models for the HTTP API.

Deeply structured payloads (site documents, solver blocks) travel as
plain objects and are validated by the loaders that consume them; the
models here pin the envelope: field names, array shapes and defaults.
"""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class WeatherPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t: list[float]
    w_dir: list[float]
    w_spd: list[float]
    solar: list[float]


class StreamPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sensor_id: str
    t: list[float]
    ppm: list[float]


class SourcePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: float
    y: float
    z: float
    rate_kg_h: float


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    site: dict[str, Any]
    source: SourcePayload
    wind: dict[str, Any] = Field(default_factory=dict)
    weather: Optional[WeatherPayload] = None
    noise_sigma: float = 0.0
    background: float = 0.0
    seed: int = 0


class WindRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    model: Literal["synthetic", "conditioned"] = "synthetic"
    rose_csv: Optional[str] = None
    count: int = 1
    config: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class RecordParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window_s: float = 300.0
    conc_threshold: float = 5.0
    max_wind: float = 12.0
    background: Optional[float] = None
    use_cones: bool = False
    min_records: int = 5
    min_sensors: int = 1
    gamma: float = 1e5


class InvertRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    site: dict[str, Any]
    streams: list[StreamPayload]
    weather: WeatherPayload
    params: RecordParams = Field(default_factory=RecordParams)
    solver: dict[str, Any] = Field(default_factory=dict)
    mcmc: Optional[dict[str, Any]] = None
    seed: int = 0


class MonitorStepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    site: dict[str, Any]
    state: Optional[dict[str, Any]] = None
    config: dict[str, Any] = Field(default_factory=dict)
    solver: Optional[dict[str, Any]] = None
    mcmc: Optional[dict[str, Any]] = None
    streams: list[StreamPayload] = Field(default_factory=list)
    weather: Optional[WeatherPayload] = None
    seed: int = 0


class PlaceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    site: dict[str, Any]
    realizations: list[WeatherPayload]
    placement: dict[str, Any] = Field(default_factory=dict)
    coverage: dict[str, Any] = Field(default_factory=dict)
    solver: dict[str, Any] = Field(default_factory=dict)
    seed: int = 0


class CoverageMapRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    site: dict[str, Any]
    realization: WeatherPayload
    coverage: dict[str, Any] = Field(default_factory=dict)
    nx: int = 20
    ny: int = 20
    z_trial: float = 2.0
    rate_trial: float = 5.0
    seed: int = 0
