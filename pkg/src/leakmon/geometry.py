"""Convex site geometry: polygons, half-plane constraints and box regions.

A site is described by one master region plus any number of interior
subspaces (equipment groups that may leak) and restricted zones (areas
where sensors may not stand). Every region is a convex polygon turned
into a set of linear constraints, evaluated in 2D over ``[x y 1]`` or in
5D over ``[x y z r b 1]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# Default per-region bounds for the source height (m) and rate (kg/h)
# axes; sites rarely override these.
DEFAULT_Z_BOUNDS = (0.0, 6.0)
DEFAULT_RATE_BOUNDS = (0.1, 100.0)

# Slack used when testing constraint satisfaction.
FEASIBILITY_TOL = 1e-9


class DegeneratePolygonError(ValueError):
    """Raised when a polygon has fewer than 3 non-collinear vertices."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def _as_points(polygon) -> np.ndarray:
    if len(polygon) and isinstance(polygon[0], Point2):
        polygon = [(p.x, p.y) for p in polygon]
    pts = np.asarray(polygon, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DegeneratePolygonError(f"polygon must be an (n, 2) array of vertices, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DegeneratePolygonError("polygon contains non-finite coordinates")
    return pts


def convex_hull(points) -> np.ndarray:
    """Convex hull of 2D points in counter-clockwise order (monotone chain).

    Collinear points along an edge are dropped. Raises
    :class:`DegeneratePolygonError` when the hull has no area.
    """
    pts = _as_points(points)
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 3:
        raise DegeneratePolygonError(f"need at least 3 distinct vertices, got {uniq.shape[0]}")
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    p = uniq[order]

    def turn(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out: list[np.ndarray] = []
        for v in seq:
            while len(out) >= 2 and turn(out[-2], out[-1], v) <= 0:
                out.pop()
            out.append(v)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        raise DegeneratePolygonError("polygon vertices are collinear")
    return hull


def polygon_to_constraints(polygon, feasible_side: str = "interior"):
    """Convert a convex polygon into oriented half-plane constraints.

    One constraint per hull edge, rows ``[a b c]`` with ``hypot(a, b) = 1``
    so each value is a signed distance; ``a*x + b*y + c <= 0`` holds on the
    feasible side. In ``interior`` mode the hull's center of mass satisfies
    every row; in ``exterior`` mode it violates every row.

    Returns ``(g2, com, lb_xy, ub_xy)`` where ``g2`` is the ``(n, 3)``
    constraint array, ``com`` the center of mass of the hull vertices and
    ``lb_xy``/``ub_xy`` the axis-aligned bounds of the hull.
    """
    if feasible_side not in ("interior", "exterior"):
        raise ValueError(f"feasible_side must be 'interior' or 'exterior', got {feasible_side!r}")
    pts = _as_points(polygon)
    hull = convex_hull(pts)
    if hull.shape[0] < np.unique(pts, axis=0).shape[0]:
        warnings.warn(
            f"non-convex or collinear polygon reduced to its convex hull "
            f"({pts.shape[0]} -> {hull.shape[0]} vertices)",
            stacklevel=2,
        )
    com = hull.mean(axis=0)

    rows = []
    n = hull.shape[0]
    for i in range(n):
        p, q = hull[i], hull[(i + 1) % n]
        edge = q - p
        # Outward normal for a ccw hull: rotate the edge by -90 degrees.
        a, b = edge[1], -edge[0]
        norm = float(np.hypot(a, b))
        a, b = a / norm, b / norm
        c = -(a * p[0] + b * p[1])
        if a * com[0] + b * com[1] + c > 0:
            a, b, c = -a, -b, -c
        rows.append((a, b, c))
    g2 = np.array(rows, dtype=float)
    if feasible_side == "exterior":
        g2 = -g2
    return g2, Point2(float(com[0]), float(com[1])), hull.min(axis=0), hull.max(axis=0)


def g2_to_g5(g2: np.ndarray) -> np.ndarray:
    """Lift 2D rows ``[a b c]`` to 5D rows ``[a b 0 0 0 c]``."""
    g2 = np.asarray(g2, dtype=float)
    g5 = np.zeros((g2.shape[0], 6))
    g5[:, 0] = g2[:, 0]
    g5[:, 1] = g2[:, 1]
    g5[:, 5] = g2[:, 2]
    return g5


def evaluate_constraints(rows: np.ndarray, candidate) -> np.ndarray:
    """Evaluate affine constraint rows at a candidate point.

    ``rows`` is ``(n, k+1)`` (the last column is the constant term) and
    ``candidate`` a ``(k,)`` vector or an ``(m, k)`` batch. Returns the
    per-row values ``g_i``; the candidate satisfies row ``i`` iff
    ``g_i <= 0``.
    """
    rows = np.asarray(rows, dtype=float)
    cand = np.asarray(candidate, dtype=float)
    k = rows.shape[1] - 1
    if cand.ndim == 1:
        return rows[:, :k] @ cand + rows[:, k]
    return cand @ rows[:, :k].T + rows[:, k]


def proximity_penalty(point, com, phi: float, tau: float) -> float:
    """Exponential-decay penalty ``phi * exp(-d / tau)`` from a region center."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    p = point.as_array() if isinstance(point, Point2) else np.asarray(point, dtype=float)
    c = com.as_array() if isinstance(com, Point2) else np.asarray(com, dtype=float)
    d = float(np.hypot(*(p - c)))
    return float(phi * np.exp(-d / tau))


def clip_polygon(poly: np.ndarray, row) -> np.ndarray:
    """Clip a polygon by the half-plane ``a*x + b*y + c <= 0`` (Sutherland-Hodgman).

    Returns the clipped polygon vertices; empty array when nothing remains.
    """
    poly = np.asarray(poly, dtype=float)
    a, b, c = row
    if poly.size == 0:
        return poly.reshape(0, 2)
    vals = poly @ np.array([a, b]) + c
    out: list[np.ndarray] = []
    n = poly.shape[0]
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        vp, vq = vals[i], vals[(i + 1) % n]
        if vp <= 0:
            out.append(p)
            if vq > 0:
                out.append(p + (q - p) * (-vp / (vq - vp)))
        elif vq <= 0:
            out.append(p + (q - p) * (-vp / (vq - vp)))
    return np.array(out).reshape(-1, 2)


@dataclass
class BoxRegion:
    """A subspace, restricted zone or the master site extent.

    Carries the convex polygon, 5D lower/upper bounds over
    ``[x y z r b]``, the constraint sets in 2D and 5D, evaluation points
    and the center of mass used for penalty decay.
    """

    polygon: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    g2: np.ndarray
    g5: np.ndarray
    epts: np.ndarray
    com: Point2
    feasible_side: str = "interior"
    name: str = ""

    @classmethod
    def from_polygon(
        cls,
        polygon,
        feasible_side: str = "interior",
        z_bounds=DEFAULT_Z_BOUNDS,
        rate_bounds=DEFAULT_RATE_BOUNDS,
        index_bounds=(1.0, 1.0),
        epts=None,
        name: str = "",
    ) -> "BoxRegion":
        g2, com, lo, hi = polygon_to_constraints(polygon, feasible_side)
        hull = convex_hull(polygon)
        lb = np.array([lo[0], lo[1], z_bounds[0], rate_bounds[0], index_bounds[0]])
        ub = np.array([hi[0], hi[1], z_bounds[1], rate_bounds[1], index_bounds[1]])
        if np.any(lb > ub):
            raise ValueError(f"region {name or '?'}: lower bounds exceed upper bounds")
        if epts is None:
            pts = com.as_array().reshape(1, 2)
        else:
            pts = np.asarray(epts, dtype=float).reshape(-1, 2)
        return cls(
            polygon=hull,
            lb=lb,
            ub=ub,
            g2=g2,
            g5=g2_to_g5(g2),
            epts=pts,
            com=com,
            feasible_side=feasible_side,
            name=name,
        )

    def contains(self, point, tol: float = FEASIBILITY_TOL) -> bool:
        """Feasibility of a ground point under this region's convention.

        Interior regions require every constraint satisfied; exterior
        regions require the point not strictly inside the hull (at least
        one stored row satisfied).
        """
        vals = evaluate_constraints(self.g2, np.asarray(point, dtype=float)[:2])
        if self.feasible_side == "interior":
            return bool(np.max(vals) <= tol)
        return bool(np.min(vals) <= tol)

    def strictly_inside_hull(self, point, tol: float = FEASIBILITY_TOL) -> bool:
        """True when the point is strictly inside the polygon hull.

        Independent of ``feasible_side``; used by placement penalties to
        detect violating sensors.
        """
        vals = evaluate_constraints(self.g2, np.asarray(point, dtype=float)[:2])
        if self.feasible_side == "exterior":
            vals = -vals
        return bool(np.max(vals) < -tol)


def point_in_region(region: BoxRegion, point) -> bool:
    """True iff the point is feasible for the region (see BoxRegion.contains)."""
    return region.contains(point)


@dataclass
class SiteSpec:
    """Master region plus interior subspaces and restricted zones.

    Box indexing follows the inversion convention: index 1 is the master,
    interior subspaces run 2..n_boxes.
    """

    master: BoxRegion
    subspaces: list[BoxRegion] = field(default_factory=list)
    zones: list[BoxRegion] = field(default_factory=list)
    sensors: list[dict] = field(default_factory=list)
    affine_to_gps: np.ndarray | None = None

    def __post_init__(self):
        n_b = self.n_boxes
        self.master.lb[4] = 1.0
        self.master.ub[4] = float(n_b)
        for i, sub in enumerate(self.subspaces, start=2):
            sub.lb[4] = float(i)
            sub.ub[4] = float(i)
            if np.any(sub.lb[:2] < self.master.lb[:2] - FEASIBILITY_TOL) or np.any(
                sub.ub[:2] > self.master.ub[:2] + FEASIBILITY_TOL
            ):
                raise ValueError(f"subspace {i} ({sub.name or 'unnamed'}) extends beyond the master bounds")

    @property
    def n_boxes(self) -> int:
        return 1 + len(self.subspaces)

    def box(self, b: int) -> BoxRegion:
        """Region for box index ``b`` (1 = master, 2..n_boxes = subspaces)."""
        if b == 1:
            return self.master
        if 2 <= b <= self.n_boxes:
            return self.subspaces[b - 2]
        raise IndexError(f"box index {b} outside [1, {self.n_boxes}]")

    def evaluation_points(self) -> np.ndarray:
        """Union of subspace evaluation points (master epts when no subspaces)."""
        if self.subspaces:
            return np.vstack([s.epts for s in self.subspaces])
        return self.master.epts

    def subspace_index_of(self, point) -> int | None:
        """Index of the first interior subspace containing the point, else None."""
        for i, sub in enumerate(self.subspaces, start=2):
            vals = evaluate_constraints(sub.g2, np.asarray(point, dtype=float)[:2])
            inside = np.max(vals if sub.feasible_side == "interior" else -vals) <= FEASIBILITY_TOL
            if inside:
                return i
        return None

    def local_to_gps(self, point) -> tuple[float, float] | None:
        """Apply the configured affine transform (local meters -> lat/lon)."""
        if self.affine_to_gps is None:
            return None
        p = np.asarray(point, dtype=float)[:2]
        out = self.affine_to_gps @ np.array([p[0], p[1], 1.0])
        return float(out[0]), float(out[1])
