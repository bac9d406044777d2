"""Wall-local coordinate frames and the angle operators used to design each EMS.

Local frame convention: x' runs along the facade, y' is vertical and z' is the
outward facade normal, so a point in front of the wall has z' > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class AnglePair(NamedTuple):
    theta: float  # elevation from the local z' axis, [0, pi]
    phi: float    # azimuth in the local x'y' plane, (-pi, pi]


@dataclass(frozen=True)
class LocalFrame:
    origin: tuple[float, float, float]
    orientation: float

    def axes(self) -> np.ndarray:
        """Rows are the global components of the x', y', z' unit vectors."""
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return np.array([[c, s, 0.0], [0.0, 0.0, 1.0], [s, -c, 0.0]])

    @classmethod
    def of_wall(cls, wall) -> "LocalFrame":
        return cls(tuple(wall.barycenter), wall.orientation)


def cart_to_polar(r: Sequence[float]) -> AnglePair:
    x, y, z = (float(v) for v in r)
    if x == 0.0 and y == 0.0 and z == 0.0:
        raise ValueError("cart_to_polar is undefined at the origin")
    # same angle as acos(z/|r|) but keeps full precision near the poles
    theta = math.atan2(math.hypot(x, y), z)
    # atan2 keeps the half-plane that a plain arctan(y/x) would lose
    phi = math.atan2(y, x)
    if phi == -math.pi:
        phi = math.pi
    return AnglePair(theta, phi)


def polar_to_cart(angles: AnglePair, radius: float = 1.0) -> np.ndarray:
    theta, phi = angles
    return radius * np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


def to_local(r: Sequence[float], frame: LocalFrame) -> np.ndarray:
    """Express a global point in the wall frame."""
    dx = float(r[0]) - frame.origin[0]
    dy = float(r[1]) - frame.origin[1]
    dz = float(r[2]) - frame.origin[2]
    c, s = math.cos(frame.orientation), math.sin(frame.orientation)
    return np.array([dx * c + dy * s, dz, dx * s - dy * c])


def to_local_many(points: np.ndarray, frame: LocalFrame) -> np.ndarray:
    d = np.asarray(points, dtype=float) - np.asarray(frame.origin)
    return d @ frame.axes().T


def incidence_angles(bts: Sequence[float], frame: LocalFrame) -> AnglePair:
    """Direction of the base station as seen from the panel."""
    local = to_local(bts, frame)
    if not np.any(local):
        raise ValueError("base station coincides with the wall barycenter")
    return cart_to_polar(local)


def reflection_angles(roi_center: Sequence[float], frame: LocalFrame) -> AnglePair:
    """Direction in which the panel must steer its reflected beam."""
    local = to_local(roi_center, frame)
    if not np.any(local):
        raise ValueError("RoI center coincides with the wall barycenter")
    return cart_to_polar(local)


def incident_wave_vector(frame: LocalFrame, bts: Sequence[float], wavelength: float) -> np.ndarray:
    """Plane-wave vector of the BTS field impinging on the panel, local components.

    Points from the BTS towards the panel, with magnitude 2*pi/wavelength.
    """
    if wavelength <= 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    return -(2 * math.pi / wavelength) * polar_to_cart(incidence_angles(bts, frame))
