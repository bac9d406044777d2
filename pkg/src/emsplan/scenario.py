"""Urban scenario description: buildings, base station, RoIs and candidate walls.

Scenarios are stored as a single JSON document validated against
``data/scenario.schema.json``. Angles may be given in degrees (``*_deg``) or
radians (``*_rad``) at the file boundary; internally everything is radians.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np
from shapely.geometry import LinearRing

Point2 = tuple[float, float]
Point3 = tuple[float, float, float]

# Installation rule: panels are mounted 2 m below the top of the facade.
INSTALL_OFFSET_M = 2.0
_Z_TOL = 1e-9


class ScenarioError(ValueError):
    """Base class for scenario loading problems."""


class SchemaError(ScenarioError):
    """The file is not valid JSON or does not follow the scenario schema."""


class ScenarioValidationError(ScenarioError):
    """A parsed entity violates a physical or geometric invariant."""


@dataclass(frozen=True)
class Building:
    footprint: tuple[Point2, ...]
    height: float
    permittivity: float = 4.0
    conductivity: float = 1e-2

    @property
    def edges(self) -> np.ndarray:
        """Closed polygon edges as an array of shape (n, 2, 2)."""
        pts = np.asarray(self.footprint, dtype=float)
        return np.stack([pts, np.roll(pts, -1, axis=0)], axis=1)


@dataclass(frozen=True)
class BaseStation:
    position: Point3
    sector_azimuths: tuple[float, ...]
    sector_width: float
    downtilt: float
    input_power_w: float
    max_gain_dbi: float
    frequency_hz: float

    @property
    def sector_count(self) -> int:
        return len(self.sector_azimuths)

    @property
    def wavelength(self) -> float:
        return 299_792_458.0 / self.frequency_hz

    @property
    def input_power_dbm(self) -> float:
        return 10.0 * math.log10(self.input_power_w * 1e3)


@dataclass(frozen=True)
class RegionOfInterest:
    id: int
    center: Point3
    receivers: tuple[Point3, ...]
    area_m2: float

    @property
    def receiver_array(self) -> np.ndarray:
        return np.asarray(self.receivers, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class CandidateWall:
    roi: int
    index: int
    barycenter: Point3
    orientation: float
    height: float
    panel_area_m2: float

    @property
    def ids(self) -> tuple[int, int]:
        return (self.index, self.roi)

    @property
    def normal(self) -> np.ndarray:
        """Outward unit normal in the horizontal plane (the local z' axis)."""
        return np.array([math.sin(self.orientation), -math.cos(self.orientation), 0.0])


@dataclass(frozen=True)
class PropagationParams:
    penetration_loss_db: float = 12.0
    beamwidth: float = math.radians(5.0)


@dataclass(frozen=True)
class Scenario:
    x_min: float
    y_min: float
    side: float
    dx: float
    dy: float
    height: float
    coverage_threshold_dbm: float
    bts: BaseStation
    buildings: tuple[Building, ...]
    rois: tuple[RegionOfInterest, ...]
    walls: tuple[CandidateWall, ...]
    propagation: PropagationParams = field(default_factory=PropagationParams)
    name: str = ""

    @property
    def n_walls(self) -> int:
        """K, the number of admissible EMS sites (chromosome length)."""
        return len(self.walls)

    @property
    def n_rois(self) -> int:
        return len(self.rois)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_min + self.side, self.y_min + self.side)

    def roi(self, roi_id: int) -> RegionOfInterest:
        for r in self.rois:
            if r.id == roi_id:
                return r
        raise KeyError(roi_id)

    def walls_of(self, roi_id: int) -> list[int]:
        """Chromosome indices of the candidate walls serving ``roi_id``."""
        return [k for k, w in enumerate(self.walls) if w.roi == roi_id]

    def roi_receivers(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked receivers of all RoIs and the RoI id of each row."""
        pts = np.concatenate([r.receiver_array for r in self.rois], axis=0)
        owner = np.concatenate([np.full(len(r.receivers), r.id) for r in self.rois])
        return pts, owner

    def wall_edges(self) -> np.ndarray:
        """All building edges, shape (E, 2, 2), and matching heights via ``edge_heights``."""
        if not self.buildings:
            return np.zeros((0, 2, 2))
        return np.concatenate([b.edges for b in self.buildings], axis=0)

    def edge_heights(self) -> np.ndarray:
        if not self.buildings:
            return np.zeros(0)
        return np.concatenate([np.full(len(b.footprint), b.height) for b in self.buildings])


def _schema() -> dict:
    text = resources.files("emsplan").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def _angle(obj: dict, stem: str) -> float:
    if f"{stem}_rad" in obj:
        return float(obj[f"{stem}_rad"])
    return math.radians(obj[f"{stem}_deg"])


def _p3(seq: Sequence[float]) -> Point3:
    return (float(seq[0]), float(seq[1]), float(seq[2]))


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a :class:`Scenario` from a parsed JSON document."""
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"schema error at field '{where}': {exc.message}") from None

    b = doc["bts"]
    if "sector_azimuths_rad" in b:
        azimuths = tuple(float(a) for a in b["sector_azimuths_rad"])
    else:
        azimuths = tuple(math.radians(a) for a in b["sector_azimuths_deg"])
    bts = BaseStation(
        position=_p3(b["position"]),
        sector_azimuths=azimuths,
        sector_width=math.radians(b["sector_width_deg"]),
        downtilt=math.radians(b["downtilt_deg"]),
        input_power_w=float(b["input_power_w"]),
        max_gain_dbi=float(b["max_gain_dbi"]),
        frequency_hz=float(b["frequency_hz"]),
    )
    buildings = tuple(
        Building(
            footprint=tuple((float(p[0]), float(p[1])) for p in bd["footprint"]),
            height=float(bd["height"]),
            permittivity=float(bd.get("permittivity", 4.0)),
            conductivity=float(bd.get("conductivity", 1e-2)),
        )
        for bd in doc["buildings"]
    )
    rois = tuple(
        RegionOfInterest(
            id=int(r["id"]),
            center=_p3(r["center"]),
            receivers=tuple(_p3(p) for p in r["receivers"]),
            area_m2=float(r["area_m2"]),
        )
        for r in doc["rois"]
    )
    walls = tuple(
        CandidateWall(
            roi=int(w["roi"]),
            index=int(w["index"]),
            barycenter=_p3(w["barycenter"]),
            orientation=_angle(w, "orientation") % (2 * math.pi),
            height=float(w["height"]),
            panel_area_m2=float(w["panel_area_m2"]),
        )
        for w in doc["walls"]
    )
    prop = doc.get("propagation", {})
    defaults = PropagationParams()
    if "beamwidth_rad" in prop or "beamwidth_deg" in prop:
        beamwidth = _angle(prop, "beamwidth")
    else:
        beamwidth = defaults.beamwidth
    params = PropagationParams(
        penetration_loss_db=float(prop.get("penetration_loss_db", defaults.penetration_loss_db)),
        beamwidth=beamwidth,
    )
    ext = doc["extent"]
    grid = doc["grid"]
    scenario = Scenario(
        x_min=float(ext["x_min"]),
        y_min=float(ext["y_min"]),
        side=float(ext["side"]),
        dx=float(grid["dx"]),
        dy=float(grid["dy"]),
        height=float(grid["height"]),
        coverage_threshold_dbm=float(doc["coverage_threshold_dbm"]),
        bts=bts,
        buildings=buildings,
        rois=rois,
        walls=walls,
        propagation=params,
        name=str(doc.get("name", "")),
    )
    validate(scenario)
    return scenario


def validate(s: Scenario) -> None:
    """Check every scenario invariant; raise :class:`ScenarioValidationError` on failure."""
    if not (s.dx > 0 and s.dy > 0):
        raise ScenarioValidationError(f"grid spacing must be positive, got dx={s.dx}, dy={s.dy}")
    x0, y0, x1, y1 = s.extent

    def inside(p: Sequence[float]) -> bool:
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    bts = s.bts
    if bts.sector_count < 1:
        raise ScenarioValidationError("bts: at least one sector required")
    if not 0 < bts.sector_width <= 2 * math.pi + 1e-12:
        raise ScenarioValidationError("bts: sector width must be in (0, 360] deg")
    if bts.input_power_w <= 0:
        raise ScenarioValidationError("bts: input power must be positive")
    if bts.frequency_hz <= 0:
        raise ScenarioValidationError("bts: frequency must be positive")

    for i, b in enumerate(s.buildings):
        if len(b.footprint) < 3:
            raise ScenarioValidationError(f"building {i}: footprint needs at least 3 vertices")
        if not LinearRing(b.footprint).is_simple:
            raise ScenarioValidationError(f"building {i}: footprint is self-intersecting")
        if b.height <= 0:
            raise ScenarioValidationError(f"building {i}: height must be positive")
        if b.permittivity < 1:
            raise ScenarioValidationError(f"building {i}: permittivity must be >= 1")
        if b.conductivity < 0:
            raise ScenarioValidationError(f"building {i}: conductivity must be >= 0")

    ids = [r.id for r in s.rois]
    if len(set(ids)) != len(ids):
        raise ScenarioValidationError(f"duplicate RoI ids: {ids}")
    for r in s.rois:
        if not r.receivers:
            raise ScenarioValidationError(f"roi {r.id}: needs at least one receiver")
        if r.area_m2 <= 0:
            raise ScenarioValidationError(f"roi {r.id}: area must be positive")
        for p in r.receivers:
            if abs(p[2] - s.height) > _Z_TOL:
                raise ScenarioValidationError(
                    f"roi {r.id}: receiver {p} not at user height {s.height}"
                )
            if not inside(p):
                raise ScenarioValidationError(f"roi {r.id}: receiver {p} outside extent")

    seen = set()
    for w in s.walls:
        tag = f"wall (w={w.index}, s={w.roi})"
        if w.ids in seen:
            raise ScenarioValidationError(f"{tag}: duplicate wall id")
        seen.add(w.ids)
        if w.roi not in ids:
            raise ScenarioValidationError(f"{tag}: references unknown RoI {w.roi}")
        if abs(w.barycenter[2] - (w.height - INSTALL_OFFSET_M)) > _Z_TOL:
            raise ScenarioValidationError(
                f"{tag}: barycenter z={w.barycenter[2]} must equal wall height - "
                f"{INSTALL_OFFSET_M} = {w.height - INSTALL_OFFSET_M}"
            )
        if not 0 <= w.orientation < 2 * math.pi:
            raise ScenarioValidationError(f"{tag}: orientation must be in [0, 2pi)")
        if w.panel_area_m2 <= 0:
            raise ScenarioValidationError(f"{tag}: panel area must be positive")
        if not inside(w.barycenter):
            raise ScenarioValidationError(f"{tag}: barycenter outside extent")

    if s.propagation.penetration_loss_db < 0:
        raise ScenarioValidationError("propagation: penetration loss must be >= 0")
    if s.propagation.beamwidth <= 0:
        raise ScenarioValidationError("propagation: beamwidth must be positive")


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario JSON file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(s: Scenario) -> dict:
    """Serialise a scenario; angles are written in radians so the round trip is exact."""
    return {
        "schema_version": 1,
        "name": s.name,
        "extent": {"x_min": s.x_min, "y_min": s.y_min, "side": s.side},
        "grid": {"dx": s.dx, "dy": s.dy, "height": s.height},
        "coverage_threshold_dbm": s.coverage_threshold_dbm,
        "bts": {
            "position": list(s.bts.position),
            "sector_azimuths_rad": list(s.bts.sector_azimuths),
            "sector_width_deg": math.degrees(s.bts.sector_width),
            "downtilt_deg": math.degrees(s.bts.downtilt),
            "input_power_w": s.bts.input_power_w,
            "max_gain_dbi": s.bts.max_gain_dbi,
            "frequency_hz": s.bts.frequency_hz,
        },
        "buildings": [
            {
                "footprint": [list(p) for p in b.footprint],
                "height": b.height,
                "permittivity": b.permittivity,
                "conductivity": b.conductivity,
            }
            for b in s.buildings
        ],
        "rois": [
            {"id": r.id, "center": list(r.center), "receivers": [list(p) for p in r.receivers], "area_m2": r.area_m2}
            for r in s.rois
        ],
        "walls": [
            {
                "roi": w.roi,
                "index": w.index,
                "barycenter": list(w.barycenter),
                "orientation_rad": w.orientation,
                "height": w.height,
                "panel_area_m2": w.panel_area_m2,
            }
            for w in s.walls
        ],
        "propagation": {
            "penetration_loss_db": s.propagation.penetration_loss_db,
            "beamwidth_rad": s.propagation.beamwidth,
        },
    }


def write_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1))


def _axis(start: float, side: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ScenarioValidationError(f"grid spacing must be positive, got {step}")
    n = int(math.floor(side / step + 1e-9)) + 1
    return start + step * np.arange(n)


def grid_shape(s: Scenario) -> tuple[int, int]:
    """(rows, cols) = (number of y samples, number of x samples)."""
    return len(_axis(s.y_min, s.side, s.dy)), len(_axis(s.x_min, s.side, s.dx))


def receiver_grid(s: Scenario) -> np.ndarray:
    """Row-major receiver grid at user height: rows run along y, x varies fastest."""
    xs = _axis(s.x_min, s.side, s.dx)
    ys = _axis(s.y_min, s.side, s.dy)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, s.height)])


def write_points_csv(points: Iterable[Sequence[float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z"])
        for p in points:
            writer.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))])


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. ``"demo_k10"``)."""
    return Path(str(resources.files("emsplan").joinpath(f"data/scenarios/{name}.json")))
