import math

import numpy as np
import pytest

from emsplan.fitness import CostEvaluator
from emsplan.scenario import (
    BaseStation,
    Building,
    CandidateWall,
    PropagationParams,
    RegionOfInterest,
    Scenario,
    bundled_scenario,
    load_scenario,
    validate,
)


def patch(cx, cy, step=5.0, n=3, h=1.5):
    half = (n - 1) / 2
    return tuple((cx + (i - half) * step, cy + (j - half) * step, h) for j in range(n) for i in range(n))


def make_toy(penetration=12.0, beam_deg=5.0, power_w=20.0) -> Scenario:
    """One 20 m block, a BTS to the south-west and two RoIs, one wall each.

    Wall 0 sits on the south facade (alpha=0, normal -y) and serves RoI 1 to the
    south-east; wall 1 on the west facade (alpha=3pi/2, normal -x) serves RoI 2.
    """
    bts = BaseStation(
        position=(20.0, 10.0, 20.0),
        sector_azimuths=(0.0,),
        sector_width=2 * math.pi,
        downtilt=0.0,
        input_power_w=power_w,
        max_gain_dbi=16.3,
        frequency_hz=3.5e9,
    )
    block = Building(((40.0, 40.0), (60.0, 40.0), (60.0, 60.0), (40.0, 60.0)), 10.0)
    rois = (
        RegionOfInterest(1, (80.0, 20.0, 1.5), patch(80.0, 20.0), 225.0),
        RegionOfInterest(2, (10.0, 80.0, 1.5), patch(10.0, 80.0), 225.0),
    )
    walls = (
        CandidateWall(1, 1, (50.0, 40.0, 8.0), 0.0, 10.0, 2.14**2),
        CandidateWall(2, 1, (40.0, 50.0, 8.0), 1.5 * math.pi, 10.0, 2.14**2),
    )
    params = PropagationParams(penetration_loss_db=penetration, beamwidth=math.radians(beam_deg))
    s = Scenario(0.0, 0.0, 100.0, 5.0, 5.0, 1.5, -65.0, bts, (block,), rois, walls, params, "toy")
    validate(s)
    return s


@pytest.fixture
def toy() -> Scenario:
    return make_toy()


@pytest.fixture(scope="session")
def demo() -> Scenario:
    return load_scenario(bundled_scenario("demo_k10"))


@pytest.fixture(scope="session")
def demo_eval(demo) -> CostEvaluator:
    return CostEvaluator(demo)


@pytest.fixture(scope="session")
def k6() -> Scenario:
    return load_scenario(bundled_scenario("synth_k6"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
