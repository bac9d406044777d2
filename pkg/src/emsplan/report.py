"""Post-planning analysis: CDFs of received power, power-gap maps, blind-area reduction and summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .propagation import CoverageField

DEFAULT_LEVELS = np.arange(-70.0, -50.0 + 1e-9, 0.25)
DEFAULT_RADIUS_M = 40.0


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class CdfCurve:
    center: tuple[float, float, float]
    radius: float
    levels: np.ndarray
    theta: np.ndarray
    n_samples: int

    def at(self, level: float) -> float:
        """Value of the curve at an arbitrary level (computed from the same samples)."""
        i = np.searchsorted(self.levels, level)
        if i < len(self.levels) and self.levels[i] == level:
            return float(self.theta[i])
        raise ReportError(f"level {level} is not one of the curve abscissae")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level_dbm", "theta"])
            for lv, th in zip(self.levels, self.theta):
                w.writerow([repr(float(lv)), repr(float(th))])


def disc_mask(points: np.ndarray, center: Sequence[float], radius: float) -> np.ndarray:
    """Points whose horizontal distance from ``center`` is within ``radius``."""
    pts = np.asarray(points, dtype=float)
    return np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1]) <= radius


def cdf_values(samples: np.ndarray, levels) -> np.ndarray:
    """Empirical Pr{sample <= level} for each level."""
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise ReportError("empty sample set")
    return np.searchsorted(s, np.asarray(levels, dtype=float), side="right") / s.size


def cdf(field: CoverageField, center: Sequence[float], radius: float = DEFAULT_RADIUS_M, levels=None) -> CdfCurve:
    """Received-power CDF over the grid points of a circular region."""
    levels = DEFAULT_LEVELS if levels is None else np.sort(np.asarray(levels, dtype=float))
    inside = disc_mask(field.points, center, radius)
    if not inside.any():
        raise ReportError(f"no field points within {radius} m of {tuple(center)}")
    return CdfCurve(tuple(float(c) for c in center), float(radius), levels, cdf_values(field.power_dbm[inside], levels), int(inside.sum()))


def blind_fraction(field: CoverageField, center: Sequence[float], radius: float, threshold_dbm: float) -> float:
    """CDF evaluated exactly at the threshold: share of the disc with power <= threshold."""
    inside = disc_mask(field.points, center, radius)
    if not inside.any():
        raise ReportError("empty region")
    return float(np.mean(field.power_dbm[inside] <= threshold_dbm))


def power_gap(field_opt: CoverageField, field_nominal: CoverageField) -> np.ndarray:
    """Pointwise power change (dB) brought by a deployment."""
    if field_opt.points.shape != field_nominal.points.shape or not np.array_equal(field_opt.points, field_nominal.points):
        raise ReportError("fields are defined on different grids")
    return field_opt.power_dbm - field_nominal.power_dbm


def threshold_mask(field: CoverageField, threshold_dbm: float) -> np.ndarray:
    """1 where the point is in outage (power below threshold), else 0."""
    return field.below(threshold_dbm).astype(np.uint8)


def coverage_widening(nominal_mask, optimized_mask, region=None) -> float | None:
    """Relative reduction of the below-threshold area inside a region.

    ``region`` selects the RoI cells (boolean mask or indices); all cells when omitted.
    Returns None when the region had no blind cells to begin with.
    """
    nom = np.asarray(nominal_mask, dtype=bool)
    opt = np.asarray(optimized_mask, dtype=bool)
    if nom.shape != opt.shape:
        raise ReportError("mask shapes differ")
    if region is not None:
        nom, opt = nom[region], opt[region]
    blind0 = int(nom.sum())
    if blind0 == 0:
        return None
    return (blind0 - int(opt.sum())) / blind0


def table_one(
    threshold_dbm: float,
    n_rois: int,
    n_walls: int,
    phi_cov_nominal: float,
    n_installed: int,
    phi: float,
    phi_cov: float,
    phi_cost: float,
) -> dict:
    """Scenario/solution descriptors in the order of the classic summary table."""
    return {
        "P_th_dbm": threshold_dbm,
        "S": n_rois,
        "K": n_walls,
        "B": float(2**n_walls),
        "Phi_cov_nominal": phi_cov_nominal,
        "Q_opt": n_installed,
        "Phi": phi,
        "Phi_cov": phi_cov,
        "Phi_cost": phi_cost,
    }


def format_table_one(row: dict) -> str:
    heads = list(row)
    cells = []
    for k in heads:
        v = row[k]
        if isinstance(v, float) and k not in ("P_th_dbm",):
            cells.append(f"{v:.2e}")
        else:
            cells.append(f"{v:g}" if isinstance(v, float) else str(v))
    widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
    line1 = "  ".join(h.rjust(w) for h, w in zip(heads, widths))
    line2 = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return line1 + "\n" + line2 + "\n"


def write_table_one(row: dict, stem: str | Path) -> None:
    stem = Path(stem)
    stem.with_suffix(".json").write_text(json.dumps(row, indent=1))
    stem.with_suffix(".txt").write_text(format_table_one(row))


def progressive_blind_fractions(
    basis, chi: np.ndarray, wall_order: Sequence[int], center, radius: float, threshold_dbm: float
) -> list[float]:
    """Outage share of the disc as the EMSs in ``wall_order`` are switched on one by one.

    ``basis`` is a :class:`~emsplan.propagation.PathBasis` on a point set covering the disc.
    """
    inside = disc_mask(basis.points, center, radius)
    if not inside.any():
        raise ReportError("empty region")
    current = np.zeros(basis.n_walls, dtype=np.uint8)
    out = [float(np.mean(basis.power_dbm(current)[inside] <= threshold_dbm))]
    for k in wall_order:
        if not chi[k]:
            continue
        current[k] = 1
        out.append(float(np.mean(basis.power_dbm(current)[inside] <= threshold_dbm)))
    return out
