"""Binary genetic search over deployments, driven by the surrogate.

The population is seeded from the better half of the training set and
evolved with roulette-wheel selection, single-point crossover and two-level
mutation. Only the final elite is re-scored with the true simulator.

RNG consumption order per generation (single ``numpy`` Generator):
roulette draws, pool shuffle, then for each mating pair the crossover
draw followed by the cut point (only if crossing), then for each offspring
the mutation draw followed by its K bit-flip draws (only if mutating).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fitness import CostEvaluator, FitnessBreakdown, chromosome_str
from .scenario import Scenario
from .surrogate import KrigingRegressor, TrainingSet, predict_total_batch

# Weight given to a zero (or negative) predicted cost in the roulette wheel.
_ZERO_COST_WEIGHT = 1e12


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class GaConfig:
    population: int = 40
    iterations: int = 1000
    crossover_prob: float = 0.8
    mutation_prob: float = 0.1
    bit_mutation_prob: float = 0.01
    threshold: float | None = 0.0
    seed: int = 0
    elitism: bool = True

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise OptimizerError(f"population must be even and >= 2, got {self.population}")
        if self.iterations < 1:
            raise OptimizerError("iterations must be >= 1")
        for name in ("crossover_prob", "mutation_prob", "bit_mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise OptimizerError(f"{name} must lie in [0, 1], got {v}")
        if self.threshold is not None and self.threshold < 0:
            raise OptimizerError("convergence threshold must be >= 0")

    def to_dict(self) -> dict:
        return {
            "population": self.population,
            "iterations": self.iterations,
            "crossover_prob": self.crossover_prob,
            "mutation_prob": self.mutation_prob,
            "bit_mutation_prob": self.bit_mutation_prob,
            "threshold": self.threshold,
            "seed": self.seed,
            "elitism": self.elitism,
        }


@dataclass
class GaState:
    iteration: int
    population: np.ndarray     # (P, K) uint8
    predicted: np.ndarray      # (P,) surrogate total cost of each individual
    elite: np.ndarray          # (K,)
    elite_phi: float
    rng: np.random.Generator
    history: list[dict] = field(default_factory=list)

    def record(self) -> None:
        self.history.append(
            {
                "iter": self.iteration,
                "best_phi_pred": self.elite_phi,
                "mean_phi_pred": float(np.mean(self.predicted)),
                "Q_of_elite": int(self.elite.sum()),
            }
        )


# ---------------------------------------------------------------------------
# genetic operators
# ---------------------------------------------------------------------------

def roulette_weights(phi: np.ndarray) -> np.ndarray:
    """Selection weights proportional to fitness 1/phi."""
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(phi > 0, 1.0 / np.where(phi > 0, phi, 1.0), _ZERO_COST_WEIGHT)


def roulette_select(phi: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``n`` individuals drawn with replacement by roulette wheel."""
    w = roulette_weights(phi)
    cum = np.cumsum(w)
    draws = rng.random(n) * cum[-1]
    return np.minimum(np.searchsorted(cum, draws, side="right"), len(w) - 1)


def single_point_crossover(a: np.ndarray, b: np.ndarray, cut: int) -> tuple[np.ndarray, np.ndarray]:
    """Swap the tails of ``a`` and ``b`` after position ``cut``."""
    return np.concatenate([a[:cut], b[cut:]]), np.concatenate([b[:cut], a[cut:]])


def mutate(chi: np.ndarray, mutation_prob: float, bit_prob: float, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < mutation_prob:
        flips = rng.random(chi.size) < bit_prob
        return np.where(flips, 1 - chi, chi).astype(np.uint8)
    return chi


def breed(population: np.ndarray, predicted: np.ndarray, config: GaConfig, rng: np.random.Generator) -> np.ndarray:
    """One generation of selection, crossover and mutation."""
    n, k = population.shape
    pool = population[roulette_select(predicted, n, rng)]
    pool = pool[rng.permutation(n)]
    children = np.empty_like(pool)
    for i in range(0, n, 2):
        a, b = pool[i], pool[i + 1]
        if k > 1 and rng.random() < config.crossover_prob:
            a, b = single_point_crossover(a, b, int(rng.integers(1, k)))
        children[i], children[i + 1] = a, b
    for i in range(n):
        children[i] = mutate(children[i], config.mutation_prob, config.bit_mutation_prob, rng)
    return children


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def initialize(
    training: TrainingSet,
    config: GaConfig,
    model: KrigingRegressor | None = None,
    mask: np.ndarray | None = None,
) -> GaState:
    """Initial population: the training argmin plus P-1 random picks among the better half.

    ``mask`` clears the bits of unusable walls; masked individuals are re-scored by ``model``.
    """
    T, P = len(training), config.population
    if T < P:
        raise OptimizerError(f"training set ({T}) smaller than population ({P})")
    rng = np.random.default_rng(config.seed)
    order = np.argsort(training.phi, kind="stable")
    top = order[: max(P, math.ceil(T / 2))]
    # slot 0 holds the training argmin, the rest are drawn from the remaining better half
    picks = np.concatenate([top[:1], top[1:][rng.choice(len(top) - 1, size=P - 1, replace=False)]])
    population = training.X[picks].astype(np.uint8)
    if mask is not None:
        population &= mask
    if model is not None:
        predicted = predict_total_batch(model, population)
    elif mask is not None and not np.array_equal(population, training.X[picks]):
        raise OptimizerError("a model is needed to score masked individuals")
    else:
        predicted = training.phi[picks].astype(float)
    best = int(np.argmin(predicted))
    state = GaState(0, population, predicted, population[best].copy(), float(predicted[best]), rng)
    state.record()
    return state


def step(state: GaState, model: KrigingRegressor, config: GaConfig, mask: np.ndarray | None = None) -> GaState:
    """Evolve one generation and update the all-time elite in place."""
    children = breed(state.population, state.predicted, config, state.rng)
    if mask is not None:
        children &= mask
    predicted = predict_total_batch(model, children)
    best = int(np.argmin(predicted))
    if predicted[best] < state.elite_phi:
        state.elite = children[best].copy()
        state.elite_phi = float(predicted[best])
    elif config.elitism:
        # the all-time elite survives in place of the worst offspring
        worst = int(np.argmax(predicted))
        children[worst] = state.elite
        predicted[worst] = state.elite_phi
    state.iteration += 1
    state.population = children
    state.predicted = predicted
    state.record()
    return state


@dataclass
class PlanResult:
    chromosome: np.ndarray
    predicted: FitnessBreakdown
    true: FitnessBreakdown
    final_best: np.ndarray
    final_best_phi_pred: float
    iterations: int
    history: list[dict]
    config: GaConfig
    training_size: int
    roi_stats: dict[int, dict] = field(default_factory=dict)

    @property
    def n_installed(self) -> int:
        return int(self.chromosome.sum())

    @property
    def time_saving(self) -> float:
        return time_saving(self.config, self.training_size)

    def to_dict(self) -> dict:
        return {
            "chromosome": chromosome_str(self.chromosome),
            "Q": self.n_installed,
            "predicted": self.predicted.to_dict(),
            "true": self.true.to_dict(),
            "final_population_best": chromosome_str(self.final_best),
            "final_population_best_phi_pred": self.final_best_phi_pred,
            "iterations": self.iterations,
            "config": self.config.to_dict(),
            "training_size": self.training_size,
            "time_saving": self.time_saving,
            "roi_stats": {str(k): v for k, v in self.roi_stats.items()},
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def write_log(self, path: str | Path) -> None:
        write_run_log(self.history, path)


def write_run_log(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iter", "best_phi_pred", "mean_phi_pred", "Q_of_elite"])
        w.writeheader()
        for row in history:
            w.writerow(row)


def roi_stats(evaluator: CostEvaluator, chi: np.ndarray) -> dict[int, dict]:
    p = evaluator.roi_power_dbm(chi)
    th = evaluator.scenario.coverage_threshold_dbm
    out = {}
    for s in np.unique(evaluator.owner):
        ps = p[evaluator.owner == s]
        out[int(s)] = {
            "receivers": int(ps.size),
            "below_threshold": int(np.sum(ps < th)),
            "min_power_dbm": float(ps.min()),
            "mean_power_dbm": float(ps.mean()),
            "installed": int(sum(chi[k] for k in evaluator.scenario.walls_of(int(s)))),
        }
    return out


def usable_mask(scenario: Scenario, evaluator: CostEvaluator | None = None) -> np.ndarray:
    evaluator = evaluator or CostEvaluator(scenario)
    return np.array([d.usable for d in evaluator.basis.designs], dtype=np.uint8)


def run(
    scenario: Scenario,
    model: KrigingRegressor,
    training: TrainingSet,
    config: GaConfig,
    evaluator: CostEvaluator | None = None,
) -> PlanResult:
    """Full surrogate-driven search; the returned elite is re-scored with the simulator."""
    if model.n_features_in_ != scenario.n_walls or training.n_walls != scenario.n_walls:
        raise OptimizerError("model/training dimension does not match the scenario")
    evaluator = evaluator or CostEvaluator(scenario)
    mask = usable_mask(scenario, evaluator)
    state = initialize(training, config, model, mask)
    for _ in range(config.iterations):
        step(state, model, config, mask)
        if config.threshold is not None and state.elite_phi <= config.threshold:
            break

    chi = state.elite
    pred_cov = float(model.predict(chi[None].astype(float))[0])
    predicted = FitnessBreakdown(state.elite_phi, pred_cov, state.elite_phi - pred_cov)
    final = int(np.argmin(state.predicted))
    return PlanResult(
        chromosome=chi.copy(),
        predicted=predicted,
        true=evaluator.breakdown(chi),
        final_best=state.population[final].copy(),
        final_best_phi_pred=float(state.predicted[final]),
        iterations=state.iteration,
        history=state.history,
        config=config,
        training_size=len(training),
        roi_stats=roi_stats(evaluator, chi),
    )


def time_saving(config: GaConfig | tuple[int, int], n_training: int) -> float:
    """Fraction of simulator calls saved versus scoring every individual of every generation."""
    if isinstance(config, GaConfig):
        budget = config.population * config.iterations
    else:
        budget = config[0] * config[1]
    if budget <= 0:
        raise OptimizerError("P*I must be positive")
    return (budget - n_training) / budget


@dataclass(frozen=True)
class BruteForceResult:
    chromosome: np.ndarray
    breakdown: FitnessBreakdown
    phi_all: np.ndarray  # total cost of every chromosome, indexed by its binary code

    def to_dict(self) -> dict:
        return {
            "chromosome": chromosome_str(self.chromosome),
            "Q": int(self.chromosome.sum()),
            "true": self.breakdown.to_dict(),
            "evaluated": int(self.phi_all.size),
        }


def all_chromosomes(n_walls: int) -> np.ndarray:
    """Every K-bit chromosome, row i encoding the integer i (most significant bit first)."""
    return np.array(list(itertools.product((0, 1), repeat=n_walls)), dtype=np.uint8)


def brute_force(scenario: Scenario, max_walls: int = 16, evaluator: CostEvaluator | None = None) -> BruteForceResult:
    """Exhaustive global optimum of the true cost."""
    k = scenario.n_walls
    if k > max_walls:
        raise OptimizerError(f"brute force limited to K <= {max_walls}, scenario has K={k}")
    evaluator = evaluator or CostEvaluator(scenario)
    X = all_chromosomes(k)
    phi = np.empty(len(X))
    for lo in range(0, len(X), 1024):
        chunk = X[lo:lo + 1024]
        phi[lo:lo + 1024] = evaluator.coverage_terms(chunk) + chunk.sum(axis=1) / k
    best = int(np.argmin(phi))
    return BruteForceResult(X[best], evaluator.breakdown(X[best]), phi)
