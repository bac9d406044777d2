"""Generate the synthetic scenarios shipped in ``src/emsplan/data/scenarios``.

Usage: python scripts/make_scenarios.py [--only NAME]

Each scenario is a block-grid town around a three-sector BTS. RoIs are blind
patches of the nominal coverage map; candidate walls are facades near each RoI
that see both the BTS and the RoI center.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from emsplan.geometry import LocalFrame, to_local
from emsplan.propagation import count_crossings, direct_power_many
from emsplan.scenario import (
    BaseStation,
    Building,
    CandidateWall,
    PropagationParams,
    RegionOfInterest,
    Scenario,
    receiver_grid,
    validate,
    write_scenario,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "emsplan" / "data" / "scenarios"


def town(rng: np.random.Generator, side: float, block: float, street: float) -> tuple[Building, ...]:
    out = []
    n = int((side - street) // (block + street))
    for i in range(n):
        for j in range(n):
            x0 = street + i * (block + street) + rng.uniform(0, 6)
            y0 = street + j * (block + street) + rng.uniform(0, 6)
            w = rng.uniform(0.55, 0.85) * block
            d = rng.uniform(0.55, 0.85) * block
            h = float(rng.choice([9.0, 12.0, 15.0, 18.0, 24.0]))
            fp = ((x0, y0), (x0 + w, y0), (x0 + w, y0 + d), (x0, y0 + d))
            out.append(Building(tuple((round(x, 2), round(y, 2)) for x, y in fp), h))
    return tuple(out)


def inside_any(points: np.ndarray, buildings) -> np.ndarray:
    mask = np.zeros(len(points), dtype=bool)
    for b in buildings:
        fp = np.asarray(b.footprint)
        lo, hi = fp.min(axis=0), fp.max(axis=0)
        mask |= (points[:, 0] >= lo[0]) & (points[:, 0] <= hi[0]) & (points[:, 1] >= lo[1]) & (points[:, 1] <= hi[1])
    return mask


def facades(buildings, min_len=8.0):
    for b in buildings:
        pts = list(b.footprint)
        for a, c in zip(pts, pts[1:] + pts[:1]):
            ex, ey = c[0] - a[0], c[1] - a[1]
            length = math.hypot(ex, ey)
            if length < min_len:
                continue
            mid = ((a[0] + c[0]) / 2, (a[1] + c[1]) / 2)
            # counter-clockwise footprint: the edge direction is the local x' axis
            yield mid, math.atan2(ey, ex) % (2 * math.pi), b.height


def build(
    name: str,
    seed: int,
    n_rois: int,
    walls_per_roi: list[int],
    threshold: float = -65.0,
    side: float = 400.0,
    panel_area: float = 1.0,
    beam_deg: float = 5.0,
    penetration: float = 12.0,
    roi_half: float = 15.0,
    bts_height: float = 25.0,
    power_w: float = 20.0,
    min_members: int = 12,
    max_wall_dist: float = 110.0,
    need_bts_los: bool = True,
    block: float = 45.0,
    street: float = 15.0,
) -> Scenario:
    rng = np.random.default_rng(seed)
    buildings = town(rng, side, block=block, street=street)
    c = side / 2
    bts = BaseStation(
        position=(c + 0.5, c + 0.5, bts_height),
        sector_azimuths=(0.0, 2 * math.pi / 3, 4 * math.pi / 3),
        sector_width=2 * math.pi / 3,
        downtilt=math.radians(2.0),
        input_power_w=power_w,
        max_gain_dbi=16.3,
        frequency_hz=3.5e9,
    )
    params = PropagationParams(penetration_loss_db=penetration, beamwidth=math.radians(beam_deg))
    skeleton = Scenario(0.0, 0.0, side, 5.0, 5.0, 1.5, threshold, bts, buildings, (), (), params, name)
    grid = receiver_grid(skeleton)
    p0 = direct_power_many(skeleton, grid)
    outdoor = ~inside_any(grid, buildings)
    dist = np.hypot(grid[:, 0] - c, grid[:, 1] - c)
    blind = (p0 < threshold) & outdoor & (dist > 60) & (grid[:, 0] > 40) & (grid[:, 0] < side - 40) & (grid[:, 1] > 40) & (grid[:, 1] < side - 40)

    edges, heights = skeleton.wall_edges(), skeleton.edge_heights()
    fac = list(facades(buildings))
    rois, walls = [], []
    taken = np.zeros(len(grid), dtype=bool)
    order = rng.permutation(np.flatnonzero(blind))
    for idx in order:
        if len(rois) == n_rois:
            break
        center = grid[idx]
        if taken[idx]:
            continue
        box = (np.abs(grid[:, 0] - center[0]) <= roi_half) & (np.abs(grid[:, 1] - center[1]) <= roi_half)
        members = box & blind & ~taken
        if members.sum() < min_members:
            continue
        cands = []
        for mid, alpha, h in fac:
            bary = (mid[0], mid[1], h - 2.0)
            frame = LocalFrame(bary, alpha)
            lb = to_local(bts.position, frame)
            lr = to_local(center, frame)
            if lb[2] <= 1.0 or lr[2] <= 1.0:
                continue
            d = math.hypot(mid[0] - center[0], mid[1] - center[1])
            if d > max_wall_dist or d < 15:
                continue
            normal = np.array([math.sin(alpha), -math.cos(alpha), 0.0])
            start = np.asarray(bary) + 0.05 * normal
            if count_crossings(start, center[None], edges, heights)[0] > 0:
                continue
            if need_bts_los and count_crossings(np.asarray(bts.position), start[None], edges, heights)[0] > 0:
                continue
            cands.append((d, bary, alpha, h))
        w_needed = walls_per_roi[len(rois)]
        if len(cands) < w_needed:
            continue
        cands.sort(key=lambda t: t[0])
        pick = [cands[i] for i in sorted(rng.choice(min(len(cands), 2 * w_needed), size=w_needed, replace=False))]
        s = len(rois) + 1
        pts = grid[members]
        rois.append(
            RegionOfInterest(
                s,
                (float(center[0]), float(center[1]), 1.5),
                tuple(tuple(float(v) for v in p) for p in pts),
                float(len(pts) * 25.0),
            )
        )
        for w, (_, bary, alpha, h) in enumerate(pick, start=1):
            walls.append(CandidateWall(s, w, tuple(float(v) for v in bary), alpha, h, panel_area))
        taken |= np.hypot(grid[:, 0] - center[0], grid[:, 1] - center[1]) < 90
    if len(rois) < n_rois:
        raise RuntimeError(f"{name}: found only {len(rois)} RoIs")
    scen = Scenario(0.0, 0.0, side, 5.0, 5.0, 1.5, threshold, bts, buildings, tuple(rois), tuple(walls), params, name)
    validate(scen)
    return scen


COMMON = dict(
    penetration=20.0,
    roi_half=20.0,
    min_members=25,
    beam_deg=3.0,
    panel_area=2.14**2,
    max_wall_dist=70.0,
    need_bts_los=False,
    block=30.0,
    street=12.0,
)

SPECS = {
    "demo_k10": dict(seed=17, n_rois=2, walls_per_roi=[5, 5], power_w=4.0),
    "synth_a_k10": dict(seed=29, n_rois=2, walls_per_roi=[5, 5], power_w=4.0),
    "synth_b_k10": dict(seed=18, n_rois=2, walls_per_roi=[5, 5], power_w=1.0),
    "synth_k6": dict(seed=3, n_rois=1, walls_per_roi=[6], power_w=4.0, roi_half=25.0, min_members=40),
    # same descriptors as the first summary-table case: P_th=-65, S=2, K=20
    "paper_shaped_k20": dict(seed=1, n_rois=2, walls_per_roi=[10, 10], power_w=4.0, max_wall_dist=110.0),
}


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", default=None)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    for name, kw in SPECS.items():
        if args.only and name != args.only:
            continue
        scen = build(name, **{**COMMON, **kw})
        write_scenario(scen, OUT / f"{name}.json")
        print(f"{name}: K={scen.n_walls} S={scen.n_rois} M={[len(r.receivers) for r in scen.rois]}")


if __name__ == "__main__":
    main()
