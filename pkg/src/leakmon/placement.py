"""Optimal sensor placement under wind uncertainty.

Maximizes mean coverage over wind realizations subject to site-boundary,
subspace-exclusion, restricted-zone and pairwise-separation constraints,
all folded into one scalar score. Penalties are evaluated first and the
expensive coverage term only runs on penalty-free layouts
(call-by-need).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .coverage import CoverageConfig, EvaluationSet, coverage
from .geometry import BoxRegion, SiteSpec, evaluate_constraints, proximity_penalty
from .records import WeatherSeries
from .solvers import GAConfig, VariableSpec, miga_minimize

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 1e5
DEFAULT_PHI = 1e4
DEFAULT_TAU = 12.0
DEFAULT_D_MIN = 10.0
DEFAULT_SENSOR_Z = 1.83

FEASIBILITY_INIT_BUDGET = 2000


class PlacementInfeasibleError(RuntimeError):
    """No feasible layout found within the initialization budget."""


@dataclass
class PlacementProblem:
    site: SiteSpec
    realizations: list[WeatherSeries]
    evaluation: EvaluationSet
    n_s: int = 1
    d_min: float = DEFAULT_D_MIN
    gamma: float = DEFAULT_GAMMA
    phi: float = DEFAULT_PHI
    tau: float = DEFAULT_TAU
    sensor_z: float = DEFAULT_SENSOR_Z
    coverage: CoverageConfig = field(default_factory=CoverageConfig)

    def __post_init__(self):
        if self.n_s < 1:
            raise ValueError("need at least one sensor")
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if not self.realizations:
            raise ValueError("need at least one wind realization")


@dataclass
class EvalCounters:
    """Bookkeeping proving the call-by-need contract."""

    total: int = 0
    penalized: int = 0
    coverage_evals: int = 0
    coverage_evals_while_penalized: int = 0


def layout_sensors(u: np.ndarray, sensor_z: float = DEFAULT_SENSOR_Z) -> list[tuple[str, float, float, float]]:
    """Flat [x1 y1 x2 y2 ...] vector to (id, x, y, z) tuples."""
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    return [(f"u{i + 1}", float(u[i, 0]), float(u[i, 1]), float(sensor_z)) for i in range(u.shape[0])]


def separation_violations(u: np.ndarray, d_min: float) -> np.ndarray:
    """Per unordered pair, max(0, d_min - distance); (n^2 - n)/2 entries."""
    pts = np.asarray(u, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(pts[i] - pts[j])))
            out.append(max(0.0, d_min - d))
    return np.array(out)


def _region_violated(region: BoxRegion, point: np.ndarray) -> bool:
    """True when a sensor at ``point`` breaks this region's placement rule.

    Subspaces and exterior-feasible zones exclude sensors from their
    interior; interior-feasible zones require sensors inside.
    """
    if region.feasible_side == "interior":
        return not region.contains(point)
    return region.strictly_inside_hull(point)


def layout_penalties(u: np.ndarray, problem: PlacementProblem):
    """Site, subspace, zone and separation penalty components.

    Subspace and zone terms apply the proximity decay only to sensors
    actually violating the region; a clean layout scores exactly zero so
    the call-by-need gate has a crisp trigger.
    """
    pts = np.asarray(u, dtype=float).reshape(-1, 2)
    site = problem.site
    gamma = problem.gamma

    g = evaluate_constraints(site.master.g2, pts)
    p_site = float(gamma * np.sum(np.maximum(0.0, g) ** 2))

    p_sub = 0.0
    for sub in site.subspaces:
        for i in range(pts.shape[0]):
            if sub.strictly_inside_hull(pts[i]):
                nu = proximity_penalty(pts[i], sub.com, problem.phi, problem.tau)
                p_sub += gamma * nu**2
    p_zone = 0.0
    for zone in site.zones:
        for i in range(pts.shape[0]):
            if _region_violated(zone, pts[i]):
                nu = proximity_penalty(pts[i], zone.com, problem.phi, problem.tau)
                p_zone += gamma * nu**2

    deficits = separation_violations(pts, problem.d_min)
    p_sep = float(gamma * np.sum(deficits**2))
    return p_site, p_sub, p_zone, p_sep


def placement_objective(u: np.ndarray, problem: PlacementProblem, counters: EvalCounters | None = None) -> float:
    """Score S for one layout: mean coverage, or minus the total penalty.

    Penalties are checked first; coverage is evaluated only when every
    penalty is exactly zero, so any constrained layout scores strictly
    below any feasible one (coverage is bounded by [0, 100]).
    """
    if counters is not None:
        counters.total += 1
    p_site, p_sub, p_zone, p_sep = layout_penalties(u, problem)
    total = p_site + p_sub + p_zone + p_sep
    if total > 0:
        if counters is not None:
            counters.penalized += 1
        return -total

    if counters is not None:
        counters.coverage_evals += 1
        # must stay zero: coverage is only reached once every penalty is zero
        counters.coverage_evals_while_penalized += int(total > 0)
    sensors = layout_sensors(u, problem.sensor_z)
    values = [
        coverage(sensors, w, problem.evaluation, problem.site, problem.coverage, realization_idx=j).C
        for j, w in enumerate(problem.realizations)
    ]
    return float(np.mean(values))


def _feasible_point(problem: PlacementProblem, rng: np.random.Generator, budget: int) -> np.ndarray | None:
    lb, ub = problem.site.master.lb, problem.site.master.ub
    for _ in range(budget):
        p = rng.uniform(lb[:2], ub[:2])
        if not problem.site.master.contains(p):
            continue
        if any(sub.strictly_inside_hull(p) for sub in problem.site.subspaces):
            continue
        if any(_region_violated(zone, p) for zone in problem.site.zones):
            continue
        return p
    return None


def random_feasible_layout(
    problem: PlacementProblem, rng: np.random.Generator, budget: int = FEASIBILITY_INIT_BUDGET
) -> np.ndarray | None:
    """Rejection-sample a layout satisfying every placement constraint."""
    pts: list[np.ndarray] = []
    for _ in range(problem.n_s):
        placed = None
        for _ in range(budget // max(problem.n_s, 1)):
            p = _feasible_point(problem, rng, 1)
            if p is None:
                continue
            if all(np.hypot(*(p - q)) >= problem.d_min for q in pts):
                placed = p
                break
        if placed is None:
            return None
        pts.append(placed)
    return np.concatenate(pts)


@dataclass
class PlacementResult:
    best_u: np.ndarray
    S: float
    n_s: int
    history: list[float]
    trace_S: list[float]
    trace_best_feasible: list[float]
    per_realization_C: list[float]
    counters: EvalCounters
    feasible: bool
    sensor_z: float = DEFAULT_SENSOR_Z

    def to_dict(self):
        return {
            "n_s": self.n_s,
            "S": self.S,
            "sensors": [
                {"id": s[0], "x": s[1], "y": s[2], "z": s[3]}
                for s in layout_sensors(self.best_u.ravel(), self.sensor_z)
            ],
            "per_realization_C": self.per_realization_C,
            "feasible": self.feasible,
            "evaluations": {
                "total": self.counters.total,
                "penalized": self.counters.penalized,
                "coverage": self.counters.coverage_evals,
                "coverage_while_penalized": self.counters.coverage_evals_while_penalized,
            },
            "history_best_S": self.history,
            "trace_S": self.trace_S,
            "trace_best_feasible_S": self.trace_best_feasible,
        }


def optimize_placement(
    problem: PlacementProblem, ga_config: GAConfig, init: np.ndarray | None = None
) -> PlacementResult:
    """Maximize the placement score with the mixed-integer GA.

    The initial population is seeded with rejection-sampled feasible
    layouts (plus any caller-provided rows); failing to find even one
    feasible layout raises with the blocking regions named.
    """
    rng = np.random.Generator(np.random.PCG64(ga_config.seed))
    seeds: list[np.ndarray] = []
    if init is not None:
        seeds.extend(np.asarray(init, dtype=float).reshape(-1, 2 * problem.n_s))
    for _ in range(ga_config.population):
        lay = random_feasible_layout(problem, rng)
        if lay is not None:
            seeds.append(lay)
    if not any(sum(layout_penalties(s, problem)) == 0.0 for s in seeds):
        blockers = [r.name or "unnamed" for r in problem.site.subspaces + problem.site.zones]
        raise PlacementInfeasibleError(
            f"no feasible layout for n_s={problem.n_s}, d_min={problem.d_min}; blocking regions: {blockers}"
        )

    counters = EvalCounters()
    trace_S: list[float] = []
    trace_best: list[float] = []

    def objective(u):
        s = placement_objective(u, problem, counters)
        trace_S.append(s)
        prev = trace_best[-1] if trace_best else -np.inf
        trace_best.append(max(prev, s) if s >= 0 else prev)
        return -s

    lb = np.tile(problem.site.master.lb[:2], problem.n_s)
    ub = np.tile(problem.site.master.ub[:2], problem.n_s)
    spec = VariableSpec(kinds=["continuous"] * (2 * problem.n_s), lower=lb, upper=ub)
    ga = miga_minimize(objective, spec, ga_config, init=np.array(seeds) if seeds else None)

    best_u = ga.best_x
    p_total = sum(layout_penalties(best_u, problem))
    feasible = p_total == 0.0
    if not feasible:
        log.warning("optimize_placement: best layout still carries penalty %.3g", p_total)
    sensors = layout_sensors(best_u, problem.sensor_z)
    per_real = [
        coverage(sensors, w, problem.evaluation, problem.site, problem.coverage, realization_idx=j).C
        for j, w in enumerate(problem.realizations)
    ]
    return PlacementResult(
        best_u=best_u.reshape(-1, 2),
        S=-ga.best_f,
        n_s=problem.n_s,
        history=[-h for h in ga.history],
        trace_S=trace_S,
        trace_best_feasible=trace_best,
        per_realization_C=per_real,
        counters=counters,
        feasible=feasible,
        sensor_z=problem.sensor_z,
    )


def grow_sensor_count(
    problem: PlacementProblem,
    max_n: int,
    marginal_gain_threshold: float,
    ga_config: GAConfig,
) -> list[PlacementResult]:
    """Add sensors while the coverage gain clears the threshold.

    Each count warm-starts from the previous optimum plus one random
    feasible sensor, so the frontier cannot regress at fixed seeds.
    """
    results: list[PlacementResult] = []
    rng = np.random.Generator(np.random.PCG64(ga_config.seed))
    prev: PlacementResult | None = None
    for n in range(1, max_n + 1):
        prob_n = replace(problem, n_s=n)
        init = None
        if prev is not None:
            extra_prob = replace(problem, n_s=1)
            for _ in range(FEASIBILITY_INIT_BUDGET):
                extra = random_feasible_layout(extra_prob, rng)
                if extra is None:
                    break
                cand = np.concatenate([prev.best_u.ravel(), extra])
                if np.all(separation_violations(cand, problem.d_min) == 0):
                    init = cand.reshape(1, -1)
                    break
        res = optimize_placement(prob_n, ga_config, init=init)
        results.append(res)
        if prev is not None and res.S - prev.S < marginal_gain_threshold:
            break
        prev = res
    return results
