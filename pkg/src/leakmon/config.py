"""Run configuration: a single JSON document driving every command.

Top-level keys: ``seed``, ``out``, ``threads``, ``site`` plus one block
per command (``simulate``, ``wind``, ``invert``, ``monitor``,
``coverage``, ``placement``) and shared ``solver`` / ``mcmc`` blocks.
Unknown keys are rejected so typos fail loudly instead of silently
running defaults.
"""

from __future__ import annotations

import json
from typing import Any

from .coverage import CoverageConfig
from .inversion import MonitoringConfig
from .solvers import GAConfig, MCMCConfig
from .wind import WindModelConfig


class ConfigError(ValueError):
    """Invalid or malformed run configuration (CLI exit code 2)."""


TOP_LEVEL_KEYS = {
    "seed",
    "out",
    "threads",
    "site",
    "simulate",
    "wind",
    "invert",
    "monitor",
    "coverage",
    "placement",
    "solver",
    "mcmc",
}

SIMULATE_KEYS = {"source", "sensors", "wind", "noise_sigma", "background", "t0_iso"}
SOURCE_KEYS = {"x", "y", "z", "rate_kg_h"}
WIND_BLOCK_KEYS = {"model", "rose", "count"} | {
    "span_hours",
    "period_minutes",
    "sample_interval_s",
    "dw1",
    "ds1",
    "dw2",
    "ds2",
    "speed_min",
    "speed_max",
    "start_dir",
    "start_speed",
    "t0",
    "solar_constant",
    "solar_peak",
    "solar_noise",
}
INVERT_KEYS = {
    "sensors_csv",
    "weather_csv",
    "window_s",
    "conc_threshold",
    "max_wind",
    "background",
    "use_cones",
    "min_records",
    "min_sensors",
    "gamma",
}
MONITOR_KEYS = {
    "sensors_csv",
    "weather_csv",
    "checkpoint",
    "window_s",
    "step_s",
    "record_window_s",
    "conc_threshold",
    "max_wind",
    "background",
    "confirm_steps",
    "end_steps",
    "min_records",
    "min_sensors",
    "gamma",
    "use_cones",
}
COVERAGE_KEYS = {
    "weather_csv",
    "grid",
    "z_trial",
    "rate_trial",
    "t_w",
    "conc_threshold",
    "max_wind",
    "background",
    "noise_sigma",
    "min_records",
    "min_sensors",
    "good_gap",
    "medium_gap",
    "gap_metric",
    "use_subspaces",
    "polish_maxfev",
}
PLACEMENT_KEYS = {
    "n_s",
    "grow",
    "grow_threshold",
    "d_min",
    "gamma",
    "phi",
    "tau",
    "sensor_z",
    "realizations",
    "epts",
    "solver",
}
SOLVER_KEYS = {"population", "generations", "crossover_rate", "mutation_rate", "elite_count", "workers"}
MCMC_KEYS = {"chains", "steps", "burn_in", "proposal_scale", "temperature", "bins"}


def _check_keys(block: dict[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def load_config(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    _check_keys(doc, TOP_LEVEL_KEYS, "config")
    return doc


def validate_blocks(config: dict[str, Any]) -> None:
    """Structural validation of every present block (values checked on use)."""
    pairs = [
        ("simulate", SIMULATE_KEYS),
        ("wind", WIND_BLOCK_KEYS),
        ("invert", INVERT_KEYS),
        ("monitor", MONITOR_KEYS),
        ("coverage", COVERAGE_KEYS),
        ("placement", PLACEMENT_KEYS),
        ("solver", SOLVER_KEYS),
    ]
    for key, allowed in pairs:
        if key in config and config[key] is not None:
            if not isinstance(config[key], dict):
                raise ConfigError(f"config.{key}: must be an object")
            _check_keys(config[key], allowed, f"config.{key}")
    if config.get("mcmc") is not None:
        if not isinstance(config["mcmc"], dict):
            raise ConfigError("config.mcmc: must be an object")
        _check_keys(config["mcmc"], MCMC_KEYS, "config.mcmc")
    if "simulate" in config and config["simulate"] is not None:
        sim = config["simulate"]
        if "source" in sim:
            _check_keys(sim["source"], SOURCE_KEYS, "config.simulate.source")
        if "wind" in sim:
            _check_keys(sim["wind"], WIND_BLOCK_KEYS, "config.simulate.wind")
    if "placement" in config and config["placement"] is not None:
        real = config["placement"].get("realizations")
        if real is not None:
            _check_keys(real, WIND_BLOCK_KEYS | {"weather_csvs"}, "config.placement.realizations")
        solver = config["placement"].get("solver")
        if solver is not None:
            _check_keys(solver, SOLVER_KEYS, "config.placement.solver")


def ga_config(config: dict[str, Any], seed: int, workers: int | None = None) -> GAConfig:
    block = dict(config.get("solver") or {})
    if workers is not None:
        block["workers"] = workers
    try:
        return GAConfig(seed=seed, **block)
    except TypeError as exc:
        raise ConfigError(f"config.solver: {exc}") from None


def mcmc_config(config: dict[str, Any], seed: int) -> MCMCConfig | None:
    block = config.get("mcmc")
    if block is None:
        return None
    try:
        return MCMCConfig(seed=seed, **block)
    except TypeError as exc:
        raise ConfigError(f"config.mcmc: {exc}") from None


def wind_model_config(block: dict[str, Any], seed: int) -> WindModelConfig:
    fields = {k: v for k, v in block.items() if k not in ("model", "rose", "count")}
    try:
        return WindModelConfig(seed=seed, **fields)
    except TypeError as exc:
        raise ConfigError(f"wind block: {exc}") from None


def coverage_config(config: dict[str, Any], seed: int, ga: GAConfig | None = None) -> CoverageConfig:
    block = dict(config.get("coverage") or {})
    block.pop("weather_csv", None)
    block.pop("grid", None)
    block.pop("z_trial", None)
    block.pop("rate_trial", None)
    try:
        cfg = CoverageConfig(master_seed=seed, **block)
    except TypeError as exc:
        raise ConfigError(f"config.coverage: {exc}") from None
    if ga is not None:
        cfg.ga = ga
    return cfg


def monitoring_config(config: dict[str, Any], seed: int) -> MonitoringConfig:
    block = dict(config.get("monitor") or {})
    block.pop("sensors_csv", None)
    block.pop("weather_csv", None)
    block.pop("checkpoint", None)
    # The lighter per-step GA default stands unless a solver block is given.
    if config.get("solver") is not None:
        block["ga"] = ga_config(config, seed)
    mc = mcmc_config(config, seed)
    if mc is not None:
        block["mcmc"] = mc
    try:
        return MonitoringConfig(**block)
    except TypeError as exc:
        raise ConfigError(f"config.monitor: {exc}") from None
