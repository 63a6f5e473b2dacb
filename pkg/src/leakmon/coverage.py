"""Coverage: how much of a site a sensor layout can actually resolve.

Each candidate leak point is simulated as a trial source under a wind
realization, pushed through the record pipeline and inverted; the 2D
miss distance classifies the point as good, medium or poor. Coverage is
the percentage of good points, and the placement objective averages it
over wind realizations.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import SiteSpec
from .inversion import STATUS_OK, InversionProblem, invert
from .plume import Source
from .records import RecordSet, WeatherSeries, generate_records, weight_records
from .solvers import GAConfig
from .wind import synthesize_sensor_data

log = logging.getLogger(__name__)

GOOD_GAP_M = 5.0
MEDIUM_GAP_M = 15.0

DEFAULT_TRIAL_Z = 2.0
DEFAULT_TRIAL_RATE = 5.0

CATEGORY_GOOD = "good"
CATEGORY_MEDIUM = "medium"
CATEGORY_POOR = "poor"


@dataclass
class EvaluationSet:
    """Candidate leak ground positions with trial source parameters."""

    points: np.ndarray
    z_trial: float = DEFAULT_TRIAL_Z
    rate_trial: float = DEFAULT_TRIAL_RATE

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.points.shape[0] < 1:
            raise ValueError("evaluation set needs at least one point")

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


@dataclass
class CoverageConfig:
    """Record pipeline and inversion profile used for coverage trials."""

    t_w: float = 300.0
    conc_threshold: float = 5.0
    max_wind: float = 12.0
    background: float = 0.0
    noise_sigma: float = 0.0
    min_records: int = 3
    min_sensors: int = 1
    good_gap: float = GOOD_GAP_M
    medium_gap: float = MEDIUM_GAP_M
    gap_metric: str = "2d"
    use_subspaces: bool = False
    master_seed: int = 0
    ga: GAConfig = field(default_factory=lambda: GAConfig(population=14, generations=20))
    # Trials refine locally on a small budget: gap classification needs
    # sub-meter precision, not the full reporting-grade refinement.
    polish_maxfev: int = 200


@dataclass
class PointResult:
    x: float
    y: float
    gap: float
    category: str


@dataclass
class CoverageReport:
    C: float
    points: list[PointResult]
    n_good: int
    n_medium: int
    n_poor: int

    def to_dict(self):
        # An unresolvable point has an infinite gap; serialize that as
        # null so the JSON stays standard-compliant.
        return {
            "C": self.C,
            "n_good": self.n_good,
            "n_medium": self.n_medium,
            "n_poor": self.n_poor,
            "points": [
                {"x": p.x, "y": p.y, "gap": p.gap if np.isfinite(p.gap) else None, "category": p.category}
                for p in self.points
            ],
        }


@dataclass
class MeanCoverageReport:
    mean: float
    per_realization: list[CoverageReport]

    def to_dict(self):
        return {"mean": self.mean, "per_realization": [r.to_dict() for r in self.per_realization]}


def classify_solution(gap_2d: float, good: float = GOOD_GAP_M, medium: float = MEDIUM_GAP_M) -> str:
    """Good below the tight threshold, medium below the loose one, else poor.

    Both comparisons are strict, so a gap exactly at the good threshold
    is medium.
    """
    if gap_2d < 0:
        raise ValueError("optimality gap cannot be negative")
    if gap_2d < good:
        return CATEGORY_GOOD
    if gap_2d < medium:
        return CATEGORY_MEDIUM
    return CATEGORY_POOR


def _gap(best, truth: Source, metric: str) -> float:
    dx, dy = best.x - truth.x, best.y - truth.y
    if metric == "2d":
        return float(np.hypot(dx, dy))
    if metric == "3d":
        return float(np.sqrt(dx**2 + dy**2 + (best.z - truth.z) ** 2))
    if metric == "rate":
        return float(abs(best.r - truth.rate_kg_h))
    if metric == "norm4":
        return float(
            np.sqrt(
                dx**2
                + dy**2
                + (best.z - truth.z) ** 2
                + (best.r - truth.rate_kg_h) ** 2
            )
        )
    raise ValueError(f"unknown gap metric {metric!r}")


def _inversion_site(site: SiteSpec, config: CoverageConfig) -> SiteSpec:
    if config.use_subspaces or not site.subspaces:
        return site
    # Fast profile drops the subspace formulation; deep-copy the master
    # so the index-bound rewrite in SiteSpec cannot leak back.
    return SiteSpec(master=copy.deepcopy(site.master))


def trial_seed(master_seed: int, realization_idx: int, candidate_idx: int) -> int:
    """Noise seed per (candidate, realization), layout-independent."""
    return int(np.random.SeedSequence([master_seed, realization_idx, candidate_idx]).generate_state(1)[0])


def coverage(
    sensors: list[tuple[str, float, float, float]],
    weather: WeatherSeries,
    evaluation: EvaluationSet,
    site: SiteSpec,
    config: CoverageConfig,
    realization_idx: int = 0,
) -> CoverageReport:
    """Coverage of one layout under one wind realization.

    Every candidate point is simulated, windowed and inverted; points
    that never produce enough records are poor by definition.
    """
    inv_site = _inversion_site(site, config)
    points = []
    for i in range(evaluation.n):
        x, y = (float(v) for v in evaluation.points[i])
        truth = Source(x=x, y=y, z=evaluation.z_trial, rate_kg_h=evaluation.rate_trial)
        seed = trial_seed(config.master_seed, realization_idx, i)
        streams = synthesize_sensor_data(
            weather,
            truth,
            sensors,
            noise_sigma=config.noise_sigma,
            background=config.background,
            seed=seed,
        )
        recs = generate_records(
            streams,
            weather,
            t_w=config.t_w,
            conc_threshold=config.conc_threshold,
            max_wind=config.max_wind,
            background=config.background,
        )
        gap = float("inf")
        if len(recs) >= config.min_records:
            weight_records(recs)
            problem = InversionProblem(
                records=recs,
                site=inv_site,
                min_records=config.min_records,
                min_sensors=config.min_sensors,
            )
            ga = GAConfig(
                population=config.ga.population,
                generations=config.ga.generations,
                crossover_rate=config.ga.crossover_rate,
                mutation_rate=config.ga.mutation_rate,
                elite_count=config.ga.elite_count,
                seed=seed,
                workers=config.ga.workers,
            )
            sol = invert(problem, ga, None, polish_maxfev=config.polish_maxfev)
            if sol.status == STATUS_OK:
                gap = _gap(sol.best, truth, config.gap_metric)
        category = classify_solution(gap, config.good_gap, config.medium_gap) if np.isfinite(gap) else CATEGORY_POOR
        points.append(PointResult(x=x, y=y, gap=gap, category=category))

    n_good = sum(1 for p in points if p.category == CATEGORY_GOOD)
    n_medium = sum(1 for p in points if p.category == CATEGORY_MEDIUM)
    c = 100.0 * n_good / evaluation.n
    return CoverageReport(C=c, points=points, n_good=n_good, n_medium=n_medium, n_poor=evaluation.n - n_good - n_medium)


def combine_coverage(reports: list[CoverageReport]) -> MeanCoverageReport:
    """Arithmetic mean of per-realization coverage values."""
    if not reports:
        raise ValueError("need at least one realization")
    return MeanCoverageReport(mean=float(np.mean([r.C for r in reports])), per_realization=list(reports))


def mean_coverage(
    sensors: list[tuple[str, float, float, float]],
    realizations: list[WeatherSeries],
    evaluation: EvaluationSet,
    site: SiteSpec,
    config: CoverageConfig,
) -> MeanCoverageReport:
    reports = [
        coverage(sensors, w, evaluation, site, config, realization_idx=j) for j, w in enumerate(realizations)
    ]
    return combine_coverage(reports)


def coverage_map(
    sensors: list[tuple[str, float, float, float]],
    weather: WeatherSeries,
    site: SiteSpec,
    config: CoverageConfig,
    nx: int = 10,
    ny: int = 10,
    z_trial: float = DEFAULT_TRIAL_Z,
    rate_trial: float = DEFAULT_TRIAL_RATE,
) -> CoverageReport:
    """Coverage detail on a regular grid of cell centers over the master box."""
    lb, ub = site.master.lb, site.master.ub
    xs = lb[0] + (np.arange(nx) + 0.5) * (ub[0] - lb[0]) / nx
    ys = lb[1] + (np.arange(ny) + 0.5) * (ub[1] - lb[1]) / ny
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    evaluation = EvaluationSet(points=pts, z_trial=z_trial, rate_trial=rate_trial)
    return coverage(sensors, weather, evaluation, site, config)
