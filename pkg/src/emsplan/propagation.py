"""Deterministic coverage simulator.

Stand-in for a ray tracer: free-space (Friis) propagation from a sectorised
BTS, a fixed penetration loss per building wall crossed, and one additional
single-bounce path per installed EMS. All paths add incoherently in watts, so
installing a panel can only raise the received power.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ems import EmsDesign, design_all
from .geometry import LocalFrame, polar_to_cart
from .scenario import BaseStation, Scenario, grid_shape, receiver_grid

# Side-lobe / back-lobe floor of the sector pattern, relative to boresight.
PATTERN_FLOOR_DB = -25.0
# Panel-to-receiver rays start this far in front of the facade so the host wall is not hit.
_FACADE_CLEARANCE_M = 0.05
_CHUNK = 4096


class PropagationError(ValueError):
    pass


def fspl_db(distance, wavelength: float):
    """Free-space path loss 20 log10(4 pi d / lambda)."""
    return 20.0 * np.log10(4.0 * math.pi * np.asarray(distance, dtype=float) / wavelength)


def _az_exponent(width: float) -> float:
    # half-power at +-width/2, pattern cos(delta/2)^n so it vanishes only straight behind
    if width >= 2 * math.pi - 1e-9:
        return 0.0
    return math.log(0.5) / math.log(math.cos(width / 4.0))


def vertical_beamwidth(bts: BaseStation) -> float:
    """Elevation half-power beamwidth implied by G_max and the azimuth width (Kraus estimate)."""
    g_lin = 10.0 ** (bts.max_gain_dbi / 10.0)
    el_deg = 41253.0 / (g_lin * math.degrees(bts.sector_width))
    return math.radians(min(el_deg, 180.0))


def sector_gain_db(bts: BaseStation, points: np.ndarray) -> np.ndarray:
    """BTS gain (dBi) towards each point, taking the best-serving sector."""
    d = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(bts.position)
    az = np.arctan2(d[:, 1], d[:, 0])
    el = np.arctan2(d[:, 2], np.hypot(d[:, 0], d[:, 1]))

    n_az = _az_exponent(bts.sector_width)
    half_el = vertical_beamwidth(bts) / 2.0
    n_el = math.log(0.5) / math.log(math.cos(half_el)) if half_el < math.pi / 2 else 0.0

    # boresight is tilted below the horizon by the mechanical downtilt
    el_dev = el + bts.downtilt
    a_el = np.where(np.abs(el_dev) < math.pi / 2, np.cos(np.clip(el_dev, -math.pi / 2, math.pi / 2)), 0.0) ** n_el

    best = np.zeros(len(d))
    for az0 in bts.sector_azimuths:
        delta = np.angle(np.exp(1j * (az - az0)))
        a_az = np.cos(delta / 2.0) ** n_az
        best = np.maximum(best, a_az)
    rel = np.maximum(best * a_el, 10.0 ** (PATTERN_FLOOR_DB / 10.0))
    return bts.max_gain_dbi + 10.0 * np.log10(rel)


def count_crossings(src: np.ndarray, dst: np.ndarray, edges: np.ndarray, heights: np.ndarray) -> np.ndarray:
    """Number of building edges each 3D segment src->dst passes through.

    An edge counts when the 2D projections intersect and the segment is below
    the building roof at the crossing point. ``src`` may be a single point.
    """
    dst = np.atleast_2d(np.asarray(dst, dtype=float))
    src = np.broadcast_to(np.asarray(src, dtype=float), dst.shape)
    if len(edges) == 0:
        return np.zeros(len(dst), dtype=int)
    q = edges[:, 0, :][None]          # (1, E, 2)
    s = (edges[:, 1, :] - edges[:, 0, :])[None]
    out = np.empty(len(dst), dtype=int)
    for lo in range(0, len(dst), _CHUNK):
        p = src[lo:lo + _CHUNK, None, :2]
        r = dst[lo:lo + _CHUNK, None, :2] - p
        qp = q - p
        denom = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / denom
            u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / denom
        # half-open on the edge parameter so a shared vertex is counted once
        hit = (denom != 0) & (t > 0) & (t < 1) & (u >= 0) & (u < 1)
        t = np.where(hit, t, 0.0)
        z = src[lo:lo + _CHUNK, None, 2] + t * (dst[lo:lo + _CHUNK, None, 2] - src[lo:lo + _CHUNK, None, 2])
        hit &= z < heights[None]
        out[lo:lo + _CHUNK] = hit.sum(axis=1)
    return out


def direct_power_many(scenario: Scenario, points: np.ndarray) -> np.ndarray:
    """Direct-path received power (dBm) at each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    bts = scenario.bts
    dist = np.linalg.norm(pts - np.asarray(bts.position), axis=1)
    if np.any(dist == 0):
        raise PropagationError("receiver coincides with the base station")
    n_cross = count_crossings(np.asarray(bts.position), pts, scenario.wall_edges(), scenario.edge_heights())
    return (
        bts.input_power_dbm
        + sector_gain_db(bts, pts)
        - fspl_db(dist, bts.wavelength)
        - scenario.propagation.penetration_loss_db * n_cross
    )


def direct_power(scenario: Scenario, r: Sequence[float]) -> float:
    return float(direct_power_many(scenario, np.asarray(r, dtype=float)[None])[0])


def panel_gain_db(panel_area_m2: float, wavelength: float) -> float:
    """Aperture gain 4 pi A / lambda^2 of a panel, dBi."""
    return 10.0 * math.log10(4.0 * math.pi * panel_area_m2 / wavelength**2)


def beam_taper(delta_psi, beamwidth: float):
    """Pencil-beam power taper exp(-(delta_psi / beamwidth)^2), linear."""
    return np.exp(-((np.asarray(delta_psi, dtype=float) / beamwidth) ** 2))


def ems_reflected_power_many(
    scenario: Scenario, k: int, points: np.ndarray, design: EmsDesign | None = None
) -> np.ndarray:
    """Power (dBm) delivered at each point through the panel on wall ``k``.

    Returns -inf where the panel cannot reach the point: unusable design,
    receiver behind the facade, or a building in the way.
    """
    wall = scenario.walls[k]
    if design is None:
        design = design_all(scenario)[k]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(len(pts), -np.inf)
    if not design.usable:
        return out

    bts = scenario.bts
    lam = bts.wavelength
    panel = np.asarray(wall.barycenter)
    frame = LocalFrame.of_wall(wall)
    axes = frame.axes()

    d1 = float(np.linalg.norm(panel - np.asarray(bts.position)))
    hop1 = bts.input_power_dbm + float(sector_gain_db(bts, panel[None])[0]) - float(fspl_db(d1, lam))
    g_ems = panel_gain_db(wall.panel_area_m2, lam)

    vec = pts - panel
    d2 = np.linalg.norm(vec, axis=1)
    in_front = (vec @ axes[2]) > 0
    beam_dir = axes.T @ polar_to_cart(design.reflection)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.clip((vec @ beam_dir) / d2, -1.0, 1.0)
    delta_psi = np.arccos(cosang)

    start = panel + _FACADE_CLEARANCE_M * axes[2]
    blocked = count_crossings(start, pts, scenario.wall_edges(), scenario.edge_heights()) > 0
    ok = in_front & ~blocked & (d2 > 0)
    with np.errstate(divide="ignore"):
        taper_db = 10.0 * np.log10(beam_taper(delta_psi[ok], design.beamwidth))
    out[ok] = hop1 + 2.0 * g_ems - fspl_db(d2[ok], lam) + taper_db
    return out


def ems_reflected_power(scenario: Scenario, wall_index: int, r: Sequence[float]) -> float:
    return float(ems_reflected_power_many(scenario, wall_index, np.asarray(r, dtype=float)[None])[0])


def dbm_to_watts(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(p_w):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


@dataclass(frozen=True)
class CoverageField:
    points: np.ndarray
    power_dbm: np.ndarray
    chromosome: np.ndarray

    def __post_init__(self):
        if len(self.points) != len(self.power_dbm):
            raise PropagationError("power array length does not match the point set")

    def below(self, threshold_dbm: float) -> np.ndarray:
        """Boolean blind-spot mask (power strictly below threshold)."""
        return self.power_dbm < threshold_dbm


class PathBasis:
    """Per-path received powers (watts) on a fixed point set.

    Because paths add in linear power, the field for any chromosome is
    ``direct + chi @ ems``; the basis is computed once and reused.
    """

    def __init__(self, scenario: Scenario, points: np.ndarray | None = None):
        self.scenario = scenario
        self.points = receiver_grid(scenario) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        self.designs = design_all(scenario)
        self.direct_w = dbm_to_watts(direct_power_many(scenario, self.points))
        self.ems_w = np.zeros((scenario.n_walls, len(self.points)))
        for k, design in enumerate(self.designs):
            self.ems_w[k] = dbm_to_watts(ems_reflected_power_many(scenario, k, self.points, design))

    @property
    def n_walls(self) -> int:
        return self.ems_w.shape[0]

    def power_w(self, chromosomes: np.ndarray) -> np.ndarray:
        """Linear received power for one chromosome (K,) or a batch (n, K)."""
        chi = np.asarray(chromosomes)
        if chi.shape[-1] != self.n_walls:
            raise PropagationError(f"chromosome length {chi.shape[-1]} != K={self.n_walls}")
        return self.direct_w + chi.astype(float) @ self.ems_w

    def power_dbm(self, chromosomes: np.ndarray) -> np.ndarray:
        return watts_to_dbm(self.power_w(chromosomes))

    def field(self, chromosome: np.ndarray) -> CoverageField:
        chi = np.asarray(chromosome, dtype=np.uint8)
        return CoverageField(self.points, self.power_dbm(chi), chi.copy())


def coverage(scenario: Scenario, chromosome: Sequence[int], points: np.ndarray | None = None) -> CoverageField:
    """Received power for deployment ``chromosome`` on ``points`` (default: receiver grid)."""
    chi = np.asarray(chromosome, dtype=np.uint8)
    if chi.shape != (scenario.n_walls,):
        raise PropagationError(f"chromosome length {chi.size} != K={scenario.n_walls}")
    return PathBasis(scenario, points).field(chi)


def write_field_csv(field: CoverageField, path: str | Path, column: str = "power_dbm", values=None) -> None:
    vals = field.power_dbm if values is None else np.asarray(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", column])
        for (x, y, _), v in zip(field.points, vals):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v)) if vals.dtype.kind == "f" else int(v)])


def write_grid_text(scenario: Scenario, values: np.ndarray, path: str | Path, fmt: str = "%.3f") -> None:
    """Rectangular text raster (one grid row per line, y ascending) of a full-grid field."""
    rows, cols = grid_shape(scenario)
    np.savetxt(path, np.asarray(values).reshape(rows, cols), fmt=fmt)
