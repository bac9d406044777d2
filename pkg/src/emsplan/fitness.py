"""Chromosome encoding and the two-term planning cost.

A chromosome is a length-K 0/1 vector; bit k set means an EMS is installed on
candidate wall k. The cost of a deployment is the normalised coverage deficit
inside the RoIs plus the fraction of walls used.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .propagation import PathBasis
from .scenario import Scenario


class ChromosomeError(ValueError):
    pass


def as_chromosome(bits, n_walls: int | None = None) -> np.ndarray:
    """Validate and convert to a uint8 0/1 vector."""
    if isinstance(bits, str):
        if set(bits) - {"0", "1"}:
            raise ChromosomeError(f"chromosome string must contain only 0/1, got {bits!r}")
        bits = [int(c) for c in bits]
    chi = np.asarray(bits)
    if chi.ndim != 1:
        raise ChromosomeError("chromosome must be one-dimensional")
    if not np.all((chi == 0) | (chi == 1)):
        raise ChromosomeError("chromosome entries must be 0 or 1")
    if n_walls is not None and chi.size != n_walls:
        raise ChromosomeError(f"chromosome has {chi.size} bits, scenario has K={n_walls} walls")
    return chi.astype(np.uint8)


def chromosome_str(chi: Sequence[int]) -> str:
    return "".join(str(int(b)) for b in chi)


def coverage_term(power_dbm: np.ndarray, threshold_dbm: float) -> float:
    """Mean normalised power deficit over the RoI receivers.

    Only receivers strictly below the threshold contribute.
    """
    p = np.asarray(power_dbm, dtype=float)
    if p.size == 0:
        raise ValueError("coverage term needs at least one receiver")
    if threshold_dbm == 0:
        raise ValueError("threshold must be non-zero (it normalises the deficit)")
    gap = threshold_dbm - p
    return float(np.sum(np.where(gap > 0, np.abs(gap), 0.0)) / abs(threshold_dbm) / p.size)


def coverage_term_batch(power_dbm: np.ndarray, threshold_dbm: float) -> np.ndarray:
    """Row-wise :func:`coverage_term` for an (n, M) array."""
    gap = threshold_dbm - np.asarray(power_dbm, dtype=float)
    return np.where(gap > 0, gap, 0.0).sum(axis=-1) / abs(threshold_dbm) / gap.shape[-1]


def cost_term(chi: Sequence[int]) -> float:
    """Fraction of candidate walls that host an EMS."""
    chi = np.asarray(chi)
    if chi.size == 0:
        raise ValueError("empty chromosome")
    return float(np.count_nonzero(chi)) / chi.size


def fitness_value(phi: float) -> float:
    """Fitness is the reciprocal cost; a zero cost maps to +inf."""
    return math.inf if phi == 0 else 1.0 / phi


@dataclass(frozen=True)
class FitnessBreakdown:
    phi: float
    phi_cov: float
    phi_cost: float
    roi_deficits: dict[int, float] = field(default_factory=dict)

    @property
    def fitness(self) -> float:
        return fitness_value(self.phi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roi_deficits"] = {str(k): v for k, v in self.roi_deficits.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class CostEvaluator:
    """True cost of deployments on a scenario, backed by a cached path basis."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        points, self.owner = scenario.roi_receivers()
        self.basis = PathBasis(scenario, points)

    @property
    def n_walls(self) -> int:
        return self.scenario.n_walls

    def roi_power_dbm(self, chi) -> np.ndarray:
        return self.basis.power_dbm(as_chromosome(chi, self.n_walls))

    def coverage_term(self, chi) -> float:
        return coverage_term(self.roi_power_dbm(chi), self.scenario.coverage_threshold_dbm)

    def coverage_terms(self, chromosomes: np.ndarray) -> np.ndarray:
        """Coverage term of every row of an (n, K) chromosome array."""
        return coverage_term_batch(self.basis.power_dbm(np.asarray(chromosomes)), self.scenario.coverage_threshold_dbm)

    def breakdown(self, chi) -> FitnessBreakdown:
        chi = as_chromosome(chi, self.n_walls)
        p = self.basis.power_dbm(chi)
        th = self.scenario.coverage_threshold_dbm
        cov = coverage_term(p, th)
        cost = cost_term(chi)
        # each RoI scored on its own receivers only
        deficits = {
            int(s): coverage_term(p[self.owner == s], th) for s in np.unique(self.owner)
        }
        return FitnessBreakdown(cov + cost, cov, cost, deficits)


def total_cost(scenario: Scenario, chi) -> FitnessBreakdown:
    return CostEvaluator(scenario).breakdown(chi)
