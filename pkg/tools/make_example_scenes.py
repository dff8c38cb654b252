"""Regenerates the bundled example scenes in src/cfmm/data/.

Two layouts:

* full: a three-building block with a street canyon, foliage at the canyon
  mouth, and a two-lap drive route with one mast raise/lower stop. Sized so
  the route samples past 20,000 AP poses at the standard cadence.
* canyon: a compact two-building street canyon whose drive route crosses a
  clean NLOS segment (behind building A), then enters the canyon for an
  uninterrupted LOS pass with distinct-wall reflection ridges. Used by the
  geometry-oracle evaluation tests.

Rerunning overwrites the JSON files in place; output is deterministic.
"""

from pathlib import Path

import numpy as np

from cfmm.scene import (
    Building, FoliageBlob, Scene, Trajectory, UESite, Waypoint,
    sample_ap_pose_arrays, save_scene, validate_scene,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "src" / "cfmm" / "data"


def ue_row(x0: float, y: float, n: int = 8, spacing: float = 5.0) -> np.ndarray:
    xs = x0 + spacing * np.arange(n)
    return np.column_stack([xs, np.full(n, y), np.ones(n)])


def full_scene() -> Scene:
    buildings = [
        Building("A", np.array([[60.0, 80.0], [120.0, 80.0],
                                [120.0, 120.0], [60.0, 120.0]]), height_m=20.0),
        Building("B", np.array([[60.0, 130.0], [120.0, 130.0],
                                [120.0, 170.0], [60.0, 170.0]]), height_m=18.0),
        Building("C", np.array([[130.0, 70.0], [190.0, 70.0],
                                [190.0, 112.0], [130.0, 112.0]]), height_m=16.0),
    ]
    foliage = [FoliageBlob(center_m=np.array([140.0, 126.0, 4.0]),
                           radius_m=6.0, core_radius_m=2.0)]
    # UEs sit in the A-B canyon, 3 m off A's north face so the two canyon
    # walls produce reflection ridges at distinct delays.
    ues = [UESite("site0", ue_row(65.0, 123.0))]
    lap = [
        Waypoint("drive", 215.0, 128.5),
        Waypoint("drive", 40.0, 128.5),
        Waypoint("drive", 40.0, 60.0),
        Waypoint("drive", 215.0, 60.0),
    ]
    waypoints = (
        [Waypoint("start", 215.0, 60.0, height=4.5)]
        + lap
        + [Waypoint("pause", duration_s=10.0),
           Waypoint("raise", height=13.0),
           Waypoint("pause", duration_s=10.0),
           Waypoint("lower", height=4.5),
           Waypoint("pause", duration_s=10.0)]
        + lap
    )
    return Scene(
        extent_m=np.array([240.0, 200.0]),
        buildings=buildings, foliage=foliage, ue_sites=ues,
        trajectory=Trajectory(waypoints=waypoints),
    )


def canyon_scene() -> Scene:
    buildings = [
        Building("A", np.array([[20.0, 40.0], [80.0, 40.0],
                                [80.0, 60.0], [20.0, 60.0]]), height_m=20.0),
        Building("B", np.array([[20.0, 90.0], [80.0, 90.0],
                                [80.0, 110.0], [20.0, 110.0]]), height_m=18.0),
    ]
    # A 30 m wide canyon with the UEs 3 m off wall A (y=60) and the route
    # 9 m further out. The wall images land at y=57 and y=117, so on the
    # canyon pass the LOS, near-wall, and far-wall ridges stay separated,
    # and the closest approach (9.7 m) keeps the first arrival clear of
    # the zero-delay coupling spike's mainlobe after the pre-cursor cut.
    ues = [UESite("site0", ue_row(30.0, 63.0))]
    waypoints = [
        Waypoint("start", 15.0, 20.0, height=4.5),
        Waypoint("drive", 90.0, 20.0),   # behind A: NLOS, rooftop-led
        Waypoint("drive", 90.0, 72.0),   # approach: AGC steps up
        Waypoint("drive", 25.0, 72.0),   # canyon pass: LOS + reflections
    ]
    return Scene(
        extent_m=np.array([100.0, 120.0]),
        buildings=buildings, foliage=[], ue_sites=ues,
        trajectory=Trajectory(waypoints=waypoints),
    )


def main() -> None:
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    for name, scene in (("full", full_scene()), ("canyon", canyon_scene())):
        validate_scene(scene)
        positions, _, _ = sample_ap_pose_arrays(scene.trajectory)
        path = DATA_DIR / f"scene_{name}.json"
        save_scene(scene, path)
        print(f"{path.name}: {positions.shape[0]} poses, "
              f"{len(scene.buildings)} buildings, "
              f"{scene.ue_sites[0].positions_m.shape[0]} UEs")


if __name__ == "__main__":
    main()
