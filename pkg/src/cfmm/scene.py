"""Urban scene model: buildings, foliage, UE sites, and the AP trajectory.

Coordinates are metres in a right-handed frame with z up; the scene extent
is the axis-aligned box [0, extent_x] x [0, extent_y]. The mobile AP drives
a piecewise-linear route at constant speed and triggers captures on a fixed
interval, so pose index m and timestamp m * capture_interval are
interchangeable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import GRAZE_TOL_M


class SceneError(ValueError):
    """Scene fails validation; message names the offending element."""


class LinkClass(IntEnum):
    LOS = 0
    OLOS = 1  # obstructed only by foliage
    NLOS = 2  # blocked by at least one building


@dataclass
class Building:
    building_id: str
    footprint: np.ndarray  # (m, 2), stored CCW
    height_m: float
    reflection_loss_db: float = 6.0
    rooftop_diffraction_loss_db: float = 20.0

    def __post_init__(self):
        self.footprint = geometry.ensure_ccw(np.asarray(self.footprint, dtype=float))
        self.is_convex = geometry.polygon_is_convex(self.footprint)

    def blockage_chords(self, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
        """Chord length of each segment (n, 3) inside this building."""
        p0 = np.atleast_2d(np.asarray(p0, dtype=float))
        p1 = np.atleast_2d(np.asarray(p1, dtype=float))
        if self.is_convex:
            t_in, t_out = geometry.clip_segments_convex_prism(
                p0, p1, self.footprint, self.height_m
            )
            return (t_out - t_in) * np.linalg.norm(p1 - p0, axis=1)
        chords = np.zeros(p0.shape[0])
        for i in range(p0.shape[0]):
            ivals = geometry.segment_prism_intervals_general(
                p0[i], p1[i], self.footprint, self.height_m
            )
            length = np.linalg.norm(p1[i] - p0[i])
            chords[i] = sum(hi - lo for lo, hi in ivals) * length
        return chords


@dataclass
class FoliageBlob:
    center_m: np.ndarray  # (3,)
    radius_m: float
    attenuation_db_per_m: float = 1.0
    core_radius_m: float = 0.0
    core_attenuation_db_per_m: float = 4.0

    def __post_init__(self):
        self.center_m = np.asarray(self.center_m, dtype=float)

    def penetration_loss_db(self, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
        """Attenuation of each segment (n, 3) through the canopy, in dB.

        The outer shell and the dense core attenuate at different rates;
        the core chord is charged at the core rate, the remainder of the
        outer chord at the shell rate.
        """
        outer = geometry.segment_sphere_chords(p0, p1, self.center_m, self.radius_m)
        if self.core_radius_m > 0.0:
            core = geometry.segment_sphere_chords(p0, p1, self.center_m, self.core_radius_m)
        else:
            core = np.zeros_like(outer)
        return (
            self.attenuation_db_per_m * (outer - core)
            + self.core_attenuation_db_per_m * core
        )


@dataclass
class UESite:
    site_id: str
    positions_m: np.ndarray  # (8, 3)

    def __post_init__(self):
        self.positions_m = np.asarray(self.positions_m, dtype=float)


@dataclass
class Waypoint:
    action: str  # "start" | "drive" | "raise" | "lower" | "pause"
    x: float | None = None
    y: float | None = None
    height: float | None = None
    duration_s: float | None = None


@dataclass
class Trajectory:
    waypoints: list[Waypoint]
    speed_mps: float = 0.5
    capture_interval_s: float = 0.1
    lift_full_travel_s: float = 40.0  # time for the full 9 m mast travel

    LIFT_TRAVEL_M = 9.0


@dataclass
class APPose:
    index: int
    timestamp_s: float
    position: np.ndarray  # (3,)
    heading_rad: float


@dataclass
class Scene:
    extent_m: np.ndarray  # (2,)
    buildings: list[Building]
    foliage: list[FoliageBlob]
    ue_sites: list[UESite]
    trajectory: Trajectory
    name: str = "scene"

    def __post_init__(self):
        self.extent_m = np.asarray(self.extent_m, dtype=float)

    def site(self, site_id_or_index) -> UESite:
        if isinstance(site_id_or_index, int):
            return self.ue_sites[site_id_or_index]
        for s in self.ue_sites:
            if s.site_id == site_id_or_index:
                return s
        raise KeyError(f"unknown UE site {site_id_or_index!r}")

    def validate(self) -> None:
        validate_scene(self)


AP_HEIGHT_LOW_RANGE = (4.0, 5.0)
AP_HEIGHT_HIGH = 13.0
UE_HEIGHT_M = 1.0
UE_SPREAD_MAX_M = 60.0
UES_PER_SITE = 8
_HEIGHT_TOL = 1e-6


def _height_allowed(h: float) -> bool:
    lo, hi = AP_HEIGHT_LOW_RANGE
    if lo - _HEIGHT_TOL <= h <= hi + _HEIGHT_TOL:
        return True
    return abs(h - AP_HEIGHT_HIGH) <= _HEIGHT_TOL


def _in_extent(xy, extent) -> bool:
    return bool(
        np.all(xy[..., 0] >= -1e-9)
        and np.all(xy[..., 0] <= extent[0] + 1e-9)
        and np.all(xy[..., 1] >= -1e-9)
        and np.all(xy[..., 1] <= extent[1] + 1e-9)
    )


def validate_scene(scene: Scene) -> None:
    ext = scene.extent_m
    if ext.shape != (2,) or np.any(ext <= 0):
        raise SceneError("extent_m must be two positive lengths")

    seen = set()
    for i, b in enumerate(scene.buildings):
        tag = f"building {b.building_id!r}"
        if b.building_id in seen:
            raise SceneError(f"{tag}: duplicate building id")
        seen.add(b.building_id)
        if len(b.footprint) < 3 or not geometry.polygon_is_simple(b.footprint):
            raise SceneError(f"{tag}: footprint is not a simple polygon")
        if b.height_m <= 0:
            raise SceneError(f"{tag}: height must be positive")
        if b.reflection_loss_db < 0 or b.rooftop_diffraction_loss_db < 0:
            raise SceneError(f"{tag}: losses must be non-negative")
        if not _in_extent(b.footprint, ext):
            raise SceneError(f"{tag}: footprint outside scene extent")

    for i, f in enumerate(scene.foliage):
        tag = f"foliage {i}"
        if f.radius_m <= 0:
            raise SceneError(f"{tag}: radius must be positive")
        if not 0.0 <= f.core_radius_m <= f.radius_m:
            raise SceneError(f"{tag}: core radius must lie in [0, radius]")
        if f.attenuation_db_per_m < 0 or f.core_attenuation_db_per_m < 0:
            raise SceneError(f"{tag}: attenuation rates must be non-negative")
        if not _in_extent(f.center_m[:2], ext):
            raise SceneError(f"{tag}: centre outside scene extent")

    if not scene.ue_sites:
        raise SceneError("scene has no UE sites")
    for s in scene.ue_sites:
        tag = f"UE site {s.site_id!r}"
        if s.positions_m.shape != (UES_PER_SITE, 3):
            raise SceneError(f"{tag}: expected exactly {UES_PER_SITE} UE positions")
        if np.any(np.abs(s.positions_m[:, 2] - UE_HEIGHT_M) > _HEIGHT_TOL):
            raise SceneError(f"{tag}: UE heights must be {UE_HEIGHT_M} m")
        if geometry.max_pairwise_distance(s.positions_m[:, :2]) > UE_SPREAD_MAX_M + 1e-9:
            raise SceneError(f"{tag}: UEs spread over more than {UE_SPREAD_MAX_M} m")
        if not _in_extent(s.positions_m[:, :2], ext):
            raise SceneError(f"{tag}: positions outside scene extent")

    _validate_trajectory(scene.trajectory, ext)


def _validate_trajectory(traj: Trajectory, extent: np.ndarray) -> None:
    if traj.speed_mps <= 0:
        raise SceneError("trajectory: speed must be positive")
    if traj.capture_interval_s <= 0:
        raise SceneError("trajectory: capture interval must be positive")
    if traj.lift_full_travel_s <= 0:
        raise SceneError("trajectory: lift travel time must be positive")
    wps = traj.waypoints
    if not wps or wps[0].action != "start":
        raise SceneError("trajectory: first waypoint must be a 'start'")
    w0 = wps[0]
    if w0.x is None or w0.y is None or w0.height is None:
        raise SceneError("trajectory: start waypoint needs x, y and height")
    if not _height_allowed(w0.height):
        raise SceneError(
            f"trajectory: start height {w0.height} m outside "
            f"[{AP_HEIGHT_LOW_RANGE[0]}, {AP_HEIGHT_LOW_RANGE[1]}] or {AP_HEIGHT_HIGH}"
        )
    if not _in_extent(np.array([w0.x, w0.y]), extent):
        raise SceneError("trajectory: start waypoint outside scene extent")
    for i, w in enumerate(wps[1:], start=1):
        tag = f"trajectory waypoint {i}"
        if w.action == "drive":
            if w.x is None or w.y is None:
                raise SceneError(f"{tag}: drive needs x and y")
            if not _in_extent(np.array([w.x, w.y]), extent):
                raise SceneError(f"{tag}: outside scene extent")
        elif w.action in ("raise", "lower"):
            if w.height is None:
                raise SceneError(f"{tag}: {w.action} needs a target height")
            if not _height_allowed(w.height):
                raise SceneError(f"{tag}: target height {w.height} m not allowed")
        elif w.action == "pause":
            if w.duration_s is None or w.duration_s < 0:
                raise SceneError(f"{tag}: pause needs a non-negative duration")
        elif w.action == "start":
            raise SceneError(f"{tag}: only the first waypoint may be 'start'")
        else:
            raise SceneError(f"{tag}: unknown action {w.action!r}")


@dataclass
class _Segment:
    t0: float
    t1: float
    p0: np.ndarray
    p1: np.ndarray
    heading: float


def _build_segments(traj: Trajectory) -> list[_Segment]:
    wps = traj.waypoints
    x, y, h = wps[0].x, wps[0].y, wps[0].height
    t = 0.0
    lift_rate = Trajectory.LIFT_TRAVEL_M / traj.lift_full_travel_s
    segs: list[_Segment] = []
    for w in wps[1:]:
        p0 = np.array([x, y, h])
        if w.action == "drive":
            dist = float(np.hypot(w.x - x, w.y - y))
            if dist == 0.0:
                continue
            dur = dist / traj.speed_mps
            heading = float(np.arctan2(w.y - y, w.x - x))
            x, y = w.x, w.y
            segs.append(_Segment(t, t + dur, p0, np.array([x, y, h]), heading))
        elif w.action in ("raise", "lower"):
            dh = w.height - h
            if dh == 0.0:
                continue
            dur = abs(dh) / lift_rate
            h = w.height
            segs.append(_Segment(t, t + dur, p0, np.array([x, y, h]), np.nan))
        else:  # pause
            if w.duration_s == 0.0:
                continue
            dur = w.duration_s
            segs.append(_Segment(t, t + dur, p0, p0.copy(), np.nan))
        t += dur

    # Stationary segments inherit the heading of the last drive; leading
    # ones take the first drive's heading (0.0 if the route never drives).
    first_drive = next((s.heading for s in segs if not np.isnan(s.heading)), 0.0)
    current = first_drive
    for s in segs:
        if np.isnan(s.heading):
            s.heading = current
        else:
            current = s.heading
    return segs


def sample_ap_poses(traj: Trajectory) -> list[APPose]:
    """Sample the trajectory at the capture cadence.

    Pose m sits at timestamp m * capture_interval_s; the final pose is the
    last grid point not beyond the end of the route. Poses exactly on a
    segment boundary take the heading of the segment just completed.
    """
    positions, headings, timestamps = sample_ap_pose_arrays(traj)
    return [
        APPose(index=m, timestamp_s=float(timestamps[m]), position=positions[m],
               heading_rad=float(headings[m]))
        for m in range(len(timestamps))
    ]


def sample_ap_pose_arrays(traj: Trajectory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array form of sample_ap_poses: (positions (M,3), headings (M,), timestamps (M,))."""
    segs = _build_segments(traj)
    if not segs:
        raise SceneError("trajectory has zero duration")
    total = segs[-1].t1
    dt = traj.capture_interval_s
    n_poses = int(np.floor(total / dt + 1e-9)) + 1
    t = np.arange(n_poses) * dt

    t1s = np.array([s.t1 for s in segs])
    idx = np.searchsorted(t1s, t, side="left")
    idx = np.minimum(idx, len(segs) - 1)

    p0 = np.array([s.p0 for s in segs])[idx]
    p1 = np.array([s.p1 for s in segs])[idx]
    t0 = np.array([s.t0 for s in segs])[idx]
    dur = np.maximum(t1s[idx] - t0, 1e-300)
    frac = np.clip((t - t0) / dur, 0.0, 1.0)
    positions = p0 + frac[:, None] * (p1 - p0)
    headings = np.array([s.heading for s in segs])[idx]
    return positions, headings, t


def classify_link(scene: Scene, ap_pose, ue_position: np.ndarray) -> LinkClass:
    """LOS / OLOS / NLOS state of one AP-UE link.

    NLOS when any building cuts the straight line (grazing contact does not
    count); otherwise OLOS when any foliage sphere does; otherwise LOS.
    """
    ap = np.asarray(getattr(ap_pose, "position", ap_pose), dtype=float)
    ue = np.asarray(ue_position, dtype=float)
    return LinkClass(int(classify_links_batch(scene, ap[None, :], ue)[0]))


def classify_links_batch(scene: Scene, ap_positions: np.ndarray, ue_position: np.ndarray) -> np.ndarray:
    """Vectorised classify_link over AP positions (M, 3); returns uint8 (M,)."""
    ap = np.atleast_2d(np.asarray(ap_positions, dtype=float))
    ue = np.broadcast_to(np.asarray(ue_position, dtype=float), ap.shape)
    out = np.zeros(ap.shape[0], dtype=np.uint8)
    blocked = np.zeros(ap.shape[0], dtype=bool)
    for b in scene.buildings:
        blocked |= b.blockage_chords(ap, ue) > GRAZE_TOL_M
    out[blocked] = int(LinkClass.NLOS)
    if scene.foliage:
        foliated = np.zeros(ap.shape[0], dtype=bool)
        for f in scene.foliage:
            foliated |= (
                geometry.segment_sphere_chords(ap, ue, f.center_m, f.radius_m)
                > GRAZE_TOL_M
            )
        out[~blocked & foliated] = int(LinkClass.OLOS)
    return out


def classify_link_matrix(
    scene: Scene, ap_positions: np.ndarray, ue_positions: np.ndarray
) -> np.ndarray:
    """classify_links_batch over every UE column; returns uint8 (M, U)."""
    ue = np.atleast_2d(np.asarray(ue_positions, dtype=float))
    return np.stack(
        [classify_links_batch(scene, ap_positions, u) for u in ue], axis=1
    )


def segment_building_intersection(
    scene: Scene, p1: np.ndarray, p2: np.ndarray
) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """Entry/exit points of segment p1-p2 through every building it crosses.

    Returns a list of (building_id, entry_point, exit_point) ordered by
    entry parameter. Grazing contact (tangent to a facade or passing over
    the roof) yields nothing.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    length = float(np.linalg.norm(p2 - p1))
    hits: list[tuple[float, str, np.ndarray, np.ndarray]] = []
    for b in scene.buildings:
        if b.is_convex:
            t_in, t_out = geometry.clip_segments_convex_prism(
                p1[None, :], p2[None, :], b.footprint, b.height_m
            )
            ivals = [(float(t_in[0]), float(t_out[0]))]
        else:
            ivals = geometry.segment_prism_intervals_general(p1, p2, b.footprint, b.height_m)
        for lo, hi in ivals:
            if (hi - lo) * length > GRAZE_TOL_M:
                hits.append((lo, b.building_id, p1 + lo * (p2 - p1), p1 + hi * (p2 - p1)))
    hits.sort(key=lambda h: h[0])
    return [(bid, pin, pout) for _, bid, pin, pout in hits]


# --- JSON round trip -------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "name": scene.name,
        "extent_m": scene.extent_m.tolist(),
        "buildings": [
            {
                "id": b.building_id,
                "footprint": b.footprint.tolist(),
                "height_m": b.height_m,
                "reflection_loss_db": b.reflection_loss_db,
                "rooftop_diffraction_loss_db": b.rooftop_diffraction_loss_db,
            }
            for b in scene.buildings
        ],
        "foliage": [
            {
                "center_m": f.center_m.tolist(),
                "radius_m": f.radius_m,
                "attenuation_db_per_m": f.attenuation_db_per_m,
                "core_radius_m": f.core_radius_m,
                "core_attenuation_db_per_m": f.core_attenuation_db_per_m,
            }
            for f in scene.foliage
        ],
        "ue_sites": [
            {"id": s.site_id, "positions_m": s.positions_m.tolist()}
            for s in scene.ue_sites
        ],
        "trajectory": {
            "speed_mps": scene.trajectory.speed_mps,
            "capture_interval_s": scene.trajectory.capture_interval_s,
            "lift_full_travel_s": scene.trajectory.lift_full_travel_s,
            "waypoints": [
                {
                    k: v
                    for k, v in (
                        ("action", w.action),
                        ("x", w.x),
                        ("y", w.y),
                        ("height", w.height),
                        ("duration_s", w.duration_s),
                    )
                    if v is not None
                }
                for w in scene.trajectory.waypoints
            ],
        },
    }


def scene_from_dict(d: dict) -> Scene:
    try:
        traj = d["trajectory"]
        scene = Scene(
            name=d.get("name", "scene"),
            extent_m=np.asarray(d["extent_m"], dtype=float),
            buildings=[
                Building(
                    building_id=str(b["id"]),
                    footprint=np.asarray(b["footprint"], dtype=float),
                    height_m=float(b["height_m"]),
                    reflection_loss_db=float(b.get("reflection_loss_db", 6.0)),
                    rooftop_diffraction_loss_db=float(
                        b.get("rooftop_diffraction_loss_db", 20.0)
                    ),
                )
                for b in d.get("buildings", [])
            ],
            foliage=[
                FoliageBlob(
                    center_m=np.asarray(f["center_m"], dtype=float),
                    radius_m=float(f["radius_m"]),
                    attenuation_db_per_m=float(f.get("attenuation_db_per_m", 1.0)),
                    core_radius_m=float(f.get("core_radius_m", 0.0)),
                    core_attenuation_db_per_m=float(f.get("core_attenuation_db_per_m", 4.0)),
                )
                for f in d.get("foliage", [])
            ],
            ue_sites=[
                UESite(site_id=str(s["id"]), positions_m=np.asarray(s["positions_m"], dtype=float))
                for s in d.get("ue_sites", [])
            ],
            trajectory=Trajectory(
                waypoints=[
                    Waypoint(
                        action=w["action"],
                        x=w.get("x"),
                        y=w.get("y"),
                        height=w.get("height"),
                        duration_s=w.get("duration_s"),
                    )
                    for w in traj["waypoints"]
                ],
                speed_mps=float(traj.get("speed_mps", 0.5)),
                capture_interval_s=float(traj.get("capture_interval_s", 0.1)),
                lift_full_travel_s=float(traj.get("lift_full_travel_s", 40.0)),
            ),
        )
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc
    return scene


def load_scene(path) -> Scene:
    with open(path) as fh:
        scene = scene_from_dict(json.load(fh))
    scene.validate()
    return scene


def save_scene(scene: Scene, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scene_to_dict(scene), indent=2))
    return path
