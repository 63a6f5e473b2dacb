"""Gaussian plume forward model for a continuous point release.

Concentration downwind of a steady elevated source over flat open
country, with ground reflection and Pasquill-class dispersion widths.
All geometry is in plume coordinates: x downwind (m), y crosswind (m),
z above ground (m). Source strength is kg/h; concentrations come back
in g/m^3 with a ppm(v) helper for methane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Stability classes A..F map to indices 0..5.
STABILITY_CLASSES = "ABCDEF"

# Open-country dispersion coefficients, sigma = c * x * (1 + a*x)**p,
# one row per stability class.
_SY_C = np.array([0.22, 0.16, 0.11, 0.08, 0.06, 0.04])
_SY_A = np.full(6, 0.0001)
_SY_P = np.full(6, -0.5)

_SZ_C = np.array([0.20, 0.12, 0.08, 0.06, 0.03, 0.016])
_SZ_A = np.array([0.0, 0.0, 0.0002, 0.0015, 0.0003, 0.0003])
_SZ_P = np.array([0.0, -0.5, -0.5, -0.5, -1.0, -1.0])

# Methane molar mass (g/mol) and molar volume (L/mol at 25 C, 1 atm) for
# the mass-concentration to ppm(v) conversion.
MOLAR_MASS_CH4 = 16.04
MOLAR_VOLUME = 24.45

KG_PER_H_TO_G_PER_S = 1000.0 / 3600.0

# Wind speeds below this are treated as calm and rejected.
CALM_WIND_MS = 0.1

# At or above this speed (m/s) the surface layer is mechanically mixed
# and the stability class pins to neutral.
NEUTRAL_WIND_MS = 12.0


class CalmWindError(ValueError):
    """Raised when the wind is too weak to define a plume axis."""


def stability_index(cls: str | int) -> int:
    """Normalize a stability class letter or index to 0..5."""
    if isinstance(cls, str):
        c = cls.strip().upper()
        if c not in STABILITY_CLASSES:
            raise ValueError(f"unknown stability class {cls!r}")
        return STABILITY_CLASSES.index(c)
    i = int(cls)
    if not 0 <= i <= 5:
        raise ValueError(f"stability index {i} outside 0..5")
    return i


def classify_stability(wind_speed_ms: float, solar_wm2: float) -> int:
    """Pasquill stability from surface wind speed and solar irradiance.

    Daytime insolation bands (W/m^2): strong > 700, moderate 350..700,
    slight 50..350, weak 10..50; below 10 counts as night. Speeds of
    12 m/s or more force neutral regardless of insolation.
    """
    u = float(wind_speed_ms)
    s = float(solar_wm2)
    if u >= NEUTRAL_WIND_MS:
        return stability_index("D")
    band = int(np.searchsorted([2.0, 3.0, 5.0, 6.0], u, side="right"))
    if s < 10.0:
        night = "FFEDD"
        return stability_index(night[band])
    if s < 50.0:
        return stability_index("D")
    if s < 350.0:
        table = "BCCDD"
    elif s <= 700.0:
        table = "BBCDD"
    else:
        table = "AABCC"
    return stability_index(table[band])


def classify_stability_array(wind_speed_ms, solar_wm2) -> np.ndarray:
    """Vectorized classify_stability over sample arrays."""
    u = np.asarray(wind_speed_ms, dtype=float)
    s = np.asarray(solar_wm2, dtype=float)
    u, s = np.broadcast_arrays(u, s)
    band = np.searchsorted([2.0, 3.0, 5.0, 6.0], u, side="right")
    tables = {
        "night": [5, 5, 4, 3, 3],
        "weak": [3, 3, 3, 3, 3],
        "slight": [1, 2, 2, 3, 3],
        "moderate": [1, 1, 2, 3, 3],
        "strong": [0, 0, 1, 2, 2],
    }
    rows = np.select(
        [s < 10.0, s < 50.0, s < 350.0, s <= 700.0],
        [0, 1, 2, 3],
        default=4,
    )
    lut = np.array([tables["night"], tables["weak"], tables["slight"], tables["moderate"], tables["strong"]])
    out = lut[rows, band]
    out = np.where(u >= NEUTRAL_WIND_MS, 3, out)
    return out


def dispersion_sigmas(x_m, stability: str | int):
    """Crosswind and vertical plume widths at downwind distance x (m).

    Vectorized over ``x_m``; non-positive distances give zero widths.
    """
    i = stability_index(stability)
    x = np.asarray(x_m, dtype=float)
    xp = np.maximum(x, 0.0)
    sy = _SY_C[i] * xp * (1.0 + _SY_A[i] * xp) ** _SY_P[i]
    sz = _SZ_C[i] * xp * (1.0 + _SZ_A[i] * xp) ** _SZ_P[i]
    return sy, sz


def concentration(
    x_m,
    y_m,
    z_m,
    rate_kg_h: float,
    wind_speed_ms: float,
    stability: str | int,
    source_height_m: float,
) -> np.ndarray:
    """Plume concentration in g/m^3 at receptor offsets from the source.

    ``x_m`` points downwind, ``y_m`` crosswind, ``z_m`` is receptor
    height above ground. Upwind receptors (x <= 0) see zero. The ground
    is a perfect reflector; the effective release height equals the
    physical source height (no plume rise for near-ambient methane).
    """
    u = float(wind_speed_ms)
    if u < CALM_WIND_MS:
        raise CalmWindError(f"wind speed {u} m/s below calm threshold {CALM_WIND_MS}")
    x = np.asarray(x_m, dtype=float)
    y = np.asarray(y_m, dtype=float)
    z = np.asarray(z_m, dtype=float)
    x, y, z = np.broadcast_arrays(x, y, z)

    sy, sz = dispersion_sigmas(x, stability)
    q = float(rate_kg_h) * KG_PER_H_TO_G_PER_S
    h = float(source_height_m)

    with np.errstate(divide="ignore", invalid="ignore"):
        norm = q / (2.0 * np.pi * u * sy * sz)
        lateral = np.exp(-(y**2) / (2.0 * sy**2))
        vertical = np.exp(-((z - h) ** 2) / (2.0 * sz**2)) + np.exp(-((z + h) ** 2) / (2.0 * sz**2))
        c = norm * lateral * vertical
    c = np.where(x > 0.0, c, 0.0)
    c = np.where(np.isfinite(c), c, 0.0)
    return c if c.ndim else float(c)


def g_m3_to_ppm(c_g_m3) -> np.ndarray:
    """Mass concentration (g/m^3) to methane ppm(v) at 25 C, 1 atm."""
    c = np.asarray(c_g_m3, dtype=float)
    out = c * 1000.0 * MOLAR_VOLUME / MOLAR_MASS_CH4
    return out if out.ndim else float(out)


def ppm_to_g_m3(ppm) -> np.ndarray:
    c = np.asarray(ppm, dtype=float)
    out = c * MOLAR_MASS_CH4 / (MOLAR_VOLUME * 1000.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Source:
    """A candidate or true leak source in site coordinates."""

    x: float
    y: float
    z: float
    rate_kg_h: float


def concentration_at_sensors(
    source: Source,
    sensors_xyz: np.ndarray,
    wind_dir_deg: float,
    wind_speed_ms: float,
    stability: str | int,
) -> np.ndarray:
    """Concentrations (g/m^3) at sensor positions for one wind state.

    ``wind_dir_deg`` is the direction the wind blows toward, in math
    convention (degrees counter-clockwise from +x east). Site offsets
    are rotated into plume coordinates before evaluation.
    """
    sensors = np.asarray(sensors_xyz, dtype=float).reshape(-1, 3)
    th = np.deg2rad(float(wind_dir_deg))
    dx = sensors[:, 0] - source.x
    dy = sensors[:, 1] - source.y
    # Rotate so the plume axis lies along +x.
    xp = dx * np.cos(th) + dy * np.sin(th)
    yp = -dx * np.sin(th) + dy * np.cos(th)
    return concentration(xp, yp, sensors[:, 2], source.rate_kg_h, wind_speed_ms, stability, source.z)


def ppm_at_sensors(
    source: Source,
    sensors_xyz: np.ndarray,
    wind_dir_deg: float,
    wind_speed_ms: float,
    stability: str | int,
) -> np.ndarray:
    """Methane ppm(v) at sensor positions for one wind state."""
    return g_m3_to_ppm(concentration_at_sensors(source, sensors_xyz, wind_dir_deg, wind_speed_ms, stability))


def predict_ppm_records(
    x: float,
    y: float,
    z: float,
    rate_kg_h: float,
    positions: np.ndarray,
    w_dir: np.ndarray,
    w_spd: np.ndarray,
    w_stab: np.ndarray,
) -> np.ndarray:
    """Model ppm per observation record, each under its own wind state.

    Vectorized across records: ``positions`` is (n, 3) and the wind
    arrays are (n,). This is the M_pred used by the inversion objective,
    so it must stay cheap.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    w_dir = np.asarray(w_dir, dtype=float)
    u = np.asarray(w_spd, dtype=float)
    stab = np.asarray(w_stab, dtype=int)
    if np.any(u < CALM_WIND_MS):
        raise CalmWindError("record with calm wind reached the forward model")

    th = np.deg2rad(w_dir)
    dx = pos[:, 0] - x
    dy = pos[:, 1] - y
    xp = dx * np.cos(th) + dy * np.sin(th)
    yp = -dx * np.sin(th) + dy * np.cos(th)
    zp = pos[:, 2]

    xpos = np.maximum(xp, 0.0)
    sy = _SY_C[stab] * xpos * (1.0 + _SY_A[stab] * xpos) ** _SY_P[stab]
    sz = _SZ_C[stab] * xpos * (1.0 + _SZ_A[stab] * xpos) ** _SZ_P[stab]

    q = float(rate_kg_h) * KG_PER_H_TO_G_PER_S
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = q / (2.0 * np.pi * u * sy * sz)
        lateral = np.exp(-(yp**2) / (2.0 * sy**2))
        vertical = np.exp(-((zp - z) ** 2) / (2.0 * sz**2)) + np.exp(-((zp + z) ** 2) / (2.0 * sz**2))
        c = norm * lateral * vertical
    c = np.where((xp > 0.0) & np.isfinite(c), c, 0.0)
    return g_m3_to_ppm(c)


def predict_ppm_records_batch(
    candidates: np.ndarray,
    positions: np.ndarray,
    w_dir: np.ndarray,
    w_spd: np.ndarray,
    w_stab: np.ndarray,
) -> np.ndarray:
    """predict_ppm_records for a whole population of candidates at once.

    ``candidates`` is (m, 4) rows of [x y z rate_kg_h]; the result is
    (m, n) ppm values, row k identical to the per-candidate call. Lets a
    population-based optimizer amortize the per-call overhead.
    """
    cand = np.asarray(candidates, dtype=float).reshape(-1, 4)
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    w_dir = np.asarray(w_dir, dtype=float)
    u = np.asarray(w_spd, dtype=float)
    stab = np.asarray(w_stab, dtype=int)
    if np.any(u < CALM_WIND_MS):
        raise CalmWindError("record with calm wind reached the forward model")

    th = np.deg2rad(w_dir)
    dx = pos[None, :, 0] - cand[:, 0:1]
    dy = pos[None, :, 1] - cand[:, 1:2]
    xp = dx * np.cos(th) + dy * np.sin(th)
    yp = -dx * np.sin(th) + dy * np.cos(th)
    zp = pos[None, :, 2]
    z = cand[:, 2:3]

    xpos = np.maximum(xp, 0.0)
    sy = _SY_C[stab] * xpos * (1.0 + _SY_A[stab] * xpos) ** _SY_P[stab]
    sz = _SZ_C[stab] * xpos * (1.0 + _SZ_A[stab] * xpos) ** _SZ_P[stab]

    q = cand[:, 3:4] * KG_PER_H_TO_G_PER_S
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = q / (2.0 * np.pi * u * sy * sz)
        lateral = np.exp(-(yp**2) / (2.0 * sy**2))
        vertical = np.exp(-((zp - z) ** 2) / (2.0 * sz**2)) + np.exp(-((zp + z) ** 2) / (2.0 * sz**2))
        c = norm * lateral * vertical
    c = np.where((xp > 0.0) & np.isfinite(c), c, 0.0)
    return g_m3_to_ppm(c)
