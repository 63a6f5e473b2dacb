"""Circular arithmetic on wind directions in math-convention degrees."""

from __future__ import annotations

import numpy as np


def wrap_deg(angle) -> np.ndarray:
    """Wrap angles into [0, 360)."""
    out = np.asarray(angle, dtype=float) % 360.0
    # Guard against -1e-16 % 360 == 360.0 after float rounding.
    out = np.where(out >= 360.0, out - 360.0, out)
    return out if out.ndim else float(out)


def angdiff_deg(a, b) -> np.ndarray:
    """Signed smallest difference a - b, in (-180, 180]."""
    d = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    out = np.where(d > 180.0, d - 360.0, d)
    return out if out.ndim else float(out)


def circular_mean_deg(angles_deg) -> float:
    """Mean direction of angles in degrees; {350, 10} -> 0, not 180.

    Returns NaN for an empty input or a perfectly balanced set (zero
    resultant).
    """
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    if a.size == 0:
        return float("nan")
    s, c = np.sin(a).mean(), np.cos(a).mean()
    if np.hypot(s, c) < 1e-12:
        return float("nan")
    return float(wrap_deg(np.rad2deg(np.arctan2(s, c))))


def circular_std_deg(angles_deg) -> float:
    """Circular standard deviation in degrees, sqrt(-2 ln R)."""
    a = np.deg2rad(np.asarray(angles_deg, dtype=float))
    if a.size == 0:
        return float("nan")
    r = float(np.hypot(np.sin(a).mean(), np.cos(a).mean()))
    r = min(max(r, 1e-300), 1.0)
    return float(np.rad2deg(np.sqrt(-2.0 * np.log(r))))
