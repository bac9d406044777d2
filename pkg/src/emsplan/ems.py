"""Macro-scale EMS design: incidence and reflection directions for every candidate wall."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .geometry import AnglePair, LocalFrame, incidence_angles, reflection_angles
from .scenario import CandidateWall, Scenario


@dataclass(frozen=True)
class EmsDesign:
    wall: int  # w
    roi: int   # s
    incidence: AnglePair
    reflection: AnglePair
    panel_area_m2: float
    beamwidth: float
    usable: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["incidence"] = {"theta": self.incidence.theta, "phi": self.incidence.phi}
        d["reflection"] = {"theta": self.reflection.theta, "phi": self.reflection.phi}
        return d


def beam_floor(panel_area_m2: float, wavelength: float) -> float:
    """Narrowest pencil beam a panel of this size can form (diffraction limit), radians."""
    return wavelength / math.sqrt(panel_area_m2)


def design_wall(scenario: Scenario, wall: CandidateWall) -> EmsDesign:
    frame = LocalFrame.of_wall(wall)
    inc = incidence_angles(scenario.bts.position, frame)
    ref = reflection_angles(scenario.roi(wall.roi).center, frame)
    width = max(scenario.propagation.beamwidth, beam_floor(wall.panel_area_m2, scenario.bts.wavelength))
    return EmsDesign(
        wall=wall.index,
        roi=wall.roi,
        incidence=inc,
        reflection=ref,
        panel_area_m2=wall.panel_area_m2,
        beamwidth=width,
        # the BTS must illuminate the front face of the panel
        usable=inc.theta < math.pi / 2,
    )


def design_all(scenario: Scenario) -> list[EmsDesign]:
    """One design per candidate wall, in chromosome order."""
    return [design_wall(scenario, w) for w in scenario.walls]


def write_designs(designs: list[EmsDesign], path: str | Path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in designs], indent=1))
