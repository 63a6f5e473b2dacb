"""Derivative-free solvers: a mixed-integer GA and a Metropolis sampler.

Both operate on flat vectors under box bounds with per-variable kinds
(continuous or integer). Determinism contract: identical (objective,
spec, config, seed) give bitwise-identical results regardless of how
many workers evaluate the population, because every random draw happens
on the driver thread before evaluations fan out.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

TOURNAMENT_SIZE = 3
BLX_ALPHA = 0.5
MUTATION_SIGMA_FRACTION = 0.1

# Burn-in proposal adaptation: nudge scales toward this acceptance band.
ACCEPT_LOW = 0.25
ACCEPT_HIGH = 0.40
ADAPT_INTERVAL = 100
ADAPT_SHRINK = 0.8
ADAPT_GROW = 1.25


@dataclass
class VariableSpec:
    """Bounds and kinds for a flat mixed vector."""

    kinds: list[str]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.kinds)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        for k in self.kinds:
            if k not in ("continuous", "integer"):
                raise ValueError(f"unknown variable kind {k!r}")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")
        ints = self.integer_mask
        if np.any(self.lower[ints] != np.round(self.lower[ints])) or np.any(
            self.upper[ints] != np.round(self.upper[ints])
        ):
            raise ValueError("integer variable bounds must be integral")

    @property
    def n(self) -> int:
        return len(self.kinds)

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([k == "integer" for k in self.kinds])

    def clip(self, x: np.ndarray) -> np.ndarray:
        """Project onto bounds and snap integer genes."""
        out = np.clip(x, self.lower, self.upper)
        ints = self.integer_mask
        if ints.any():
            out = out.copy()
            out[..., ints] = np.clip(np.round(out[..., ints]), self.lower[ints], self.upper[ints])
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        pop = rng.uniform(self.lower, self.upper, size=(n, self.n))
        return self.clip(pop)


@dataclass
class GAConfig:
    population: int = 60
    generations: int = 200
    crossover_rate: float = 0.9
    mutation_rate: float = 0.15
    elite_count: int = 2
    seed: int = 0
    workers: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elite_count < self.population:
            raise ValueError("elite_count must be smaller than the population")


@dataclass
class MCMCConfig:
    chains: int = 2
    steps: int = 2000
    burn_in: float = 0.3
    proposal_scale: np.ndarray | None = None
    temperature: float | None = None
    seed: int = 0
    bins: int = 30

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("at least 2 chains required")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in fraction must lie in [0, 1)")


@dataclass
class GAResult:
    best_x: np.ndarray
    best_f: float
    history: list[float]
    evaluations: int


@dataclass
class MarginalHistogram:
    edges: np.ndarray
    counts: np.ndarray


@dataclass
class MCMCResult:
    marginals: list[MarginalHistogram]
    acceptance_rate: float
    mean: np.ndarray
    std: np.ndarray
    samples: np.ndarray | None = None
    diagnostics: list[str] = field(default_factory=list)


def _evaluate(objective, pop: np.ndarray, workers: int, batch: bool = False) -> np.ndarray:
    if batch:
        out = np.asarray(objective(pop), dtype=float).reshape(pop.shape[0]).copy()
    elif workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(objective, [pop[i] for i in range(pop.shape[0])]))
        out = np.array([float(v) for v in vals])
    else:
        out = np.array([float(objective(pop[i])) for i in range(pop.shape[0])])
    out[~np.isfinite(out)] = np.inf
    return out


def miga_minimize(
    objective, spec: VariableSpec, config: GAConfig, init: np.ndarray | None = None, batch: bool = False
) -> GAResult:
    """Minimize a mixed-vector objective with a generational GA.

    Tournament selection, blend crossover on continuous genes, uniform
    crossover on integer genes, Gaussian mutation projected to bounds,
    elitism. Non-finite objective values are treated as +inf. History
    holds the best-so-far value after initialization and after each
    generation (non-increasing). ``init`` rows, when given, replace the
    head of the random initial population. With ``batch`` the objective
    receives the whole ``(m, n)`` population and must return ``(m,)``
    values; ``workers`` is ignored on that path.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    ints = spec.integer_mask
    rng_range = spec.upper - spec.lower
    sigma = MUTATION_SIGMA_FRACTION * np.where(rng_range > 0, rng_range, 1.0)

    pop = spec.sample(rng, config.population)
    if init is not None and len(init):
        seeded = spec.clip(np.asarray(init, dtype=float).reshape(-1, spec.n))
        m = min(seeded.shape[0], config.population)
        pop[:m] = seeded[:m]
    fit = _evaluate(objective, pop, config.workers, batch)
    evals = config.population
    best_i = int(np.argmin(fit))
    best_x, best_f = pop[best_i].copy(), float(fit[best_i])
    history = [best_f]

    n_children = config.population - config.elite_count
    for _ in range(config.generations):
        # All randomness is drawn here, before any evaluation fan-out.
        tourn = rng.integers(0, config.population, size=(n_children, 2, TOURNAMENT_SIZE))
        do_cx = rng.random(n_children) < config.crossover_rate
        blx = rng.random((n_children, spec.n))
        pick = rng.random((n_children, spec.n)) < 0.5
        do_mut = rng.random((n_children, spec.n)) < config.mutation_rate
        steps = rng.normal(0.0, 1.0, size=(n_children, spec.n)) * sigma

        children = np.empty((n_children, spec.n))
        for i in range(n_children):
            pa = tourn[i, 0][np.argmin(fit[tourn[i, 0]])]
            pb = tourn[i, 1][np.argmin(fit[tourn[i, 1]])]
            p, q = pop[pa], pop[pb]
            if do_cx[i]:
                lo = np.minimum(p, q)
                hi = np.maximum(p, q)
                d = hi - lo
                child = lo - BLX_ALPHA * d + blx[i] * (1.0 + 2.0 * BLX_ALPHA) * d
                if ints.any():
                    child[ints] = np.where(pick[i][ints], p[ints], q[ints])
            else:
                child = p.copy()
            child = np.where(do_mut[i], child + steps[i], child)
            children[i] = child
        children = spec.clip(children)

        child_fit = _evaluate(objective, children, config.workers, batch)
        evals += n_children

        elite_idx = np.argsort(fit, kind="stable")[: config.elite_count]
        pop = np.vstack([pop[elite_idx], children])
        fit = np.concatenate([fit[elite_idx], child_fit])

        gen_best = int(np.argmin(fit))
        if fit[gen_best] < best_f:
            best_f = float(fit[gen_best])
            best_x = pop[gen_best].copy()
        history.append(best_f)

    return GAResult(best_x=best_x, best_f=best_f, history=history, evaluations=evals)


def mcmc_sample(objective, start: np.ndarray, spec: VariableSpec, config: MCMCConfig) -> MCMCResult:
    """Random-walk Metropolis on the density exp(-F/T) over box bounds.

    Continuous genes take Gaussian steps (scales adapted during burn-in
    toward a 25-40% acceptance rate), integer genes take plus/minus one
    steps; proposals outside the bounds are rejected. Marginal
    histograms pool post-burn-in samples from all chains.
    """
    start = spec.clip(np.asarray(start, dtype=float))
    f0 = float(objective(start))
    if not np.isfinite(f0):
        raise ValueError("objective must be finite at the MCMC start point")
    temp = config.temperature if config.temperature is not None else max(f0 / 10.0, 1e-9)
    if temp <= 0:
        raise ValueError("temperature must be positive")

    ints = spec.integer_mask
    span = spec.upper - spec.lower
    # Variables with zero span are pinned; perturbing them would doom
    # every proposal to rejection at the bounds check.
    ints = ints & (span > 0)
    cont = ~spec.integer_mask & (span > 0)
    base_scale = (
        np.asarray(config.proposal_scale, dtype=float)
        if config.proposal_scale is not None
        else 0.05 * np.where(span > 0, span, 1.0)
    )

    burn = int(config.burn_in * config.steps)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    kept = []
    accepted_total = 0
    proposed_total = 0
    burn_accepts = 0
    diagnostics: list[str] = []

    for ci in range(config.chains):
        rng = np.random.Generator(np.random.PCG64(seeds[ci]))
        scale = base_scale.copy()
        x = start.copy()
        fx = f0
        window_acc = 0
        chain_samples = np.empty((config.steps - burn, spec.n))
        for step in range(config.steps):
            prop = x.copy()
            if cont.any():
                prop[cont] = x[cont] + rng.normal(0.0, 1.0, size=int(cont.sum())) * scale[cont]
            if ints.any():
                prop[ints] = x[ints] + rng.choice([-1.0, 1.0], size=int(ints.sum()))
            proposed_total += 1
            inside = np.all(prop >= spec.lower) and np.all(prop <= spec.upper)
            if inside:
                fp = float(objective(prop))
                if not np.isfinite(fp):
                    fp = np.inf
                if fp <= fx or rng.random() < np.exp(-(fp - fx) / temp):
                    x, fx = prop, fp
                    accepted_total += 1
                    window_acc += 1
                    if step < burn:
                        burn_accepts += 1
            if step < burn and (step + 1) % ADAPT_INTERVAL == 0:
                rate = window_acc / ADAPT_INTERVAL
                if rate < ACCEPT_LOW:
                    scale[cont] *= ADAPT_SHRINK
                elif rate > ACCEPT_HIGH:
                    scale[cont] *= ADAPT_GROW
                window_acc = 0
            if step >= burn:
                chain_samples[step - burn] = x
        kept.append(chain_samples)

    if burn > 0 and burn_accepts == 0:
        diagnostics.append("zero acceptance during burn-in; consider reducing proposal scales or raising temperature")
        log.warning("mcmc_sample: %s", diagnostics[-1])

    pooled = np.vstack(kept)
    marginals = []
    for k in range(spec.n):
        if spec.integer_mask[k]:
            lo, hi = int(spec.lower[k]), int(spec.upper[k])
            edges = np.arange(lo, hi + 2) - 0.5
        else:
            edges = np.linspace(spec.lower[k], spec.upper[k], config.bins + 1)
        counts, edges = np.histogram(pooled[:, k], bins=edges)
        marginals.append(MarginalHistogram(edges=edges, counts=counts))

    return MCMCResult(
        marginals=marginals,
        acceptance_rate=accepted_total / max(proposed_total, 1),
        mean=pooled.mean(axis=0),
        std=pooled.std(axis=0),
        samples=pooled,
        diagnostics=diagnostics,
    )
