import numpy as np
import pytest

from cfmm import scene as sc


def ue_line(x0=20.0, y=60.0, spacing=5.0, n=8, height=1.0):
    return np.array([[x0 + i * spacing, y, height] for i in range(n)])


def make_scene(
    buildings=None,
    foliage=None,
    waypoints=None,
    extent=(100.0, 100.0),
    ue_positions=None,
    speed=0.5,
):
    if buildings is None:
        buildings = [
            sc.Building(
                building_id="B0",
                footprint=np.array([[40.0, 30.0], [60.0, 30.0], [60.0, 50.0], [40.0, 50.0]]),
                height_m=20.0,
            )
        ]
    if foliage is None:
        foliage = []
    if waypoints is None:
        waypoints = [
            sc.Waypoint("start", x=10.0, y=10.0, height=4.5),
            sc.Waypoint("drive", x=90.0, y=10.0),
        ]
    return sc.Scene(
        extent_m=np.array(extent),
        buildings=buildings,
        foliage=foliage,
        ue_sites=[sc.UESite(site_id="site0", positions_m=ue_line() if ue_positions is None else ue_positions)],
        trajectory=sc.Trajectory(waypoints=waypoints, speed_mps=speed),
    )


@pytest.fixture
def basic_scene():
    s = make_scene()
    s.validate()
    return s
