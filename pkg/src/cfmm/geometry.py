"""Planar-polygon and prism geometry primitives.

Buildings are right prisms over simple polygon footprints; foliage is
spherical. Everything here is plain numpy so the hot paths (blockage tests
for every AP pose against every facade) vectorise across segments.

Open-set semantics throughout: a segment that only grazes a boundary
(tangent, through a vertex, along a facade plane) has zero chord length and
does not count as an intersection.
"""

from __future__ import annotations

import numpy as np

# Chords shorter than this (metres) are treated as grazing contact.
GRAZE_TOL_M = 1e-9


def polygon_signed_area(vertices: np.ndarray) -> float:
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def ensure_ccw(vertices: np.ndarray) -> np.ndarray:
    """Return the footprint with counter-clockwise winding."""
    if polygon_signed_area(vertices) < 0:
        return vertices[::-1].copy()
    return vertices


def polygon_is_convex(vertices: np.ndarray) -> bool:
    """True if the CCW polygon is convex (collinear edges allowed)."""
    v = ensure_ccw(np.asarray(vertices, dtype=float))
    d = np.roll(v, -1, axis=0) - v
    cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
    return bool(np.all(cross >= -1e-12))


def _orient(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _on_segment(p, q, r):
    # r collinear with p-q: is it within the bounding box?
    return (
        min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12
        and min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12
    )


def _segments_touch(p1, q1, p2, q2) -> bool:
    o1 = _orient(p1, q1, p2)
    o2 = _orient(p1, q1, q2)
    o3 = _orient(p2, q2, p1)
    o4 = _orient(p2, q2, q1)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and 0 not in (o1, o2, o3, o4):
        return True
    if o1 == 0 and _on_segment(p1, q1, p2):
        return True
    if o2 == 0 and _on_segment(p1, q1, q2):
        return True
    if o3 == 0 and _on_segment(p2, q2, p1):
        return True
    if o4 == 0 and _on_segment(p2, q2, q1):
        return True
    return False


def polygon_is_simple(vertices: np.ndarray) -> bool:
    """True for a non-self-intersecting polygon with nonzero area.

    O(E^2) pairwise edge test; footprints are small so this is only used
    during scene validation.
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n < 3:
        return False
    if len(np.unique(v.round(decimals=9), axis=0)) != n:
        return False
    if abs(polygon_signed_area(v)) < 1e-12:
        return False
    for i in range(n):
        p1, q1 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                # Adjacent edges share a vertex; reject only if they fold
                # back onto each other.
                if (i + 1) % n == j:
                    d1 = q1 - p1
                    d2 = v[(j + 1) % n] - v[j]
                    if abs(d1[0] * d2[1] - d1[1] * d2[0]) < 1e-12 and np.dot(d1, d2) < 0:
                        return False
                continue
            p2, q2 = v[j], v[(j + 1) % n]
            if _segments_touch(p1, q1, p2, q2):
                return False
    return True


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd test for points (..., 2) against a simple polygon."""
    pts = np.asarray(points, dtype=float)
    v = np.asarray(vertices, dtype=float)
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    x1, y1 = v[:, 0], v[:, 1]
    v2 = np.roll(v, -1, axis=0)
    x2, y2 = v2[:, 0], v2[:, 1]
    straddle = (y1 <= y) != (y2 <= y)
    dy = np.where(y2 == y1, 1.0, y2 - y1)
    xint = x1 + (y - y1) * (x2 - x1) / dy
    crossings = np.sum(straddle & (xint > x), axis=-1)
    return crossings % 2 == 1


def clip_segments_convex_prism(
    p0: np.ndarray,
    p1: np.ndarray,
    vertices_ccw: np.ndarray,
    height: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Parametric clip of segments against a convex prism.

    Parameters
    ----------
    p0, p1 : ndarray, shape (n, 3)
        Segment endpoints.
    vertices_ccw : ndarray, shape (m, 2)
        Convex CCW footprint.
    height : float
        Prism extends over z in [0, height].

    Returns
    -------
    t_in, t_out : ndarray, shape (n,)
        Entry/exit parameters of the inside portion; empty when
        t_out <= t_in.
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    d = p1 - p0

    v = np.asarray(vertices_ccw, dtype=float)
    edges = np.roll(v, -1, axis=0) - v
    # Outward normals of a CCW footprint.
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)

    # Facade half-planes: inside means (p - v_i) . n_i <= 0.
    a = np.einsum("nj,mj->nm", p0[:, :2], normals) - np.einsum("mj,mj->m", v, normals)
    b = np.einsum("nj,mj->nm", d[:, :2], normals)

    # Roof/floor as two more constraints: -z <= 0 and z - h <= 0.
    a = np.concatenate([a, -p0[:, 2:3], p0[:, 2:3] - height], axis=1)
    b = np.concatenate([b, -d[:, 2:3], d[:, 2:3]], axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_cross = -a / b
    entering = b < 0
    leaving = b > 0
    # Segments parallel to a bounding plane and on or outside it only graze:
    # open-set semantics, zero chord. a is in units of m^2 (normals carry the
    # edge length), so the tolerance is sub-nanometre for metre-scale edges.
    parallel_out = (b == 0) & (a >= -1e-12)

    t_in = np.max(np.where(entering, t_cross, -np.inf), axis=1)
    t_out = np.min(np.where(leaving, t_cross, np.inf), axis=1)
    t_in = np.clip(t_in, 0.0, 1.0)
    t_out = np.clip(t_out, 0.0, 1.0)
    empty = np.any(parallel_out, axis=1)
    t_out = np.where(empty, t_in, t_out)
    t_out = np.maximum(t_in, t_out)
    return t_in, t_out


def segment_polygon_t_intervals(
    p0: np.ndarray, p1: np.ndarray, vertices: np.ndarray
) -> list[tuple[float, float]]:
    """Parameter intervals where a 2-D segment lies inside a simple polygon.

    Scalar fallback for non-convex footprints; handles any simple polygon by
    slicing the segment at edge crossings and classifying slice midpoints.
    """
    p0 = np.asarray(p0, dtype=float)[:2]
    p1 = np.asarray(p1, dtype=float)[:2]
    v = np.asarray(vertices, dtype=float)
    d = p1 - p0
    if np.hypot(*d) < 1e-15:
        inside = bool(points_in_polygon(p0[None, :], v)[0])
        return [(0.0, 1.0)] if inside else []

    ts = [0.0, 1.0]
    v2 = np.roll(v, -1, axis=0)
    for (a, b) in zip(v, v2):
        e = b - a
        denom = d[0] * e[1] - d[1] * e[0]
        if denom == 0.0:
            continue
        # Solve p0 + t d = a + s e.
        w = a - p0
        t = (w[0] * e[1] - w[1] * e[0]) / denom
        s = (w[0] * d[1] - w[1] * d[0]) / denom
        if 0.0 < t < 1.0 and 0.0 <= s <= 1.0:
            ts.append(float(t))
    ts = sorted(set(ts))
    # Classify slice midpoints via two probes offset perpendicular to the
    # segment: a midpoint riding exactly along an edge (grazing) then has one
    # probe outside and is not counted, matching open-set semantics.
    perp = np.array([-d[1], d[0]]) / np.hypot(*d) * 1e-9
    intervals = []
    for lo, hi in zip(ts[:-1], ts[1:]):
        mid = p0 + 0.5 * (lo + hi) * d
        probes = np.stack([mid + perp, mid - perp])
        if bool(np.all(points_in_polygon(probes, v))):
            if intervals and abs(intervals[-1][1] - lo) < 1e-12:
                intervals[-1] = (intervals[-1][0], hi)
            else:
                intervals.append((lo, hi))
    return intervals


def segment_prism_intervals_general(
    p0: np.ndarray, p1: np.ndarray, vertices: np.ndarray, height: float
) -> list[tuple[float, float]]:
    """Inside intervals of a 3-D segment against a general simple prism."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    dz = p1[2] - p0[2]
    if dz == 0.0:
        if not (0.0 <= p0[2] <= height):
            return []
        z_lo, z_hi = 0.0, 1.0
    else:
        ta = (0.0 - p0[2]) / dz
        tb = (height - p0[2]) / dz
        z_lo, z_hi = min(ta, tb), max(ta, tb)
        z_lo = max(z_lo, 0.0)
        z_hi = min(z_hi, 1.0)
        if z_hi <= z_lo:
            return []
    out = []
    for lo, hi in segment_polygon_t_intervals(p0[:2], p1[:2], vertices):
        a, b = max(lo, z_lo), min(hi, z_hi)
        if b > a:
            out.append((a, b))
    return out


def segment_sphere_chords(
    p0: np.ndarray, p1: np.ndarray, center: np.ndarray, radius: float
) -> np.ndarray:
    """Chord length (metres) of each segment inside a sphere.

    p0, p1 shaped (n, 3); returns (n,).
    """
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    d = p1 - p0
    f = p0 - np.asarray(center, dtype=float)
    a = np.einsum("ij,ij->i", d, d)
    b = 2.0 * np.einsum("ij,ij->i", f, d)
    c = np.einsum("ij,ij->i", f, f) - radius * radius
    disc = b * b - 4.0 * a * c
    valid = (disc > 0.0) & (a > 0.0)
    sq = np.sqrt(np.where(valid, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-b - sq) / (2.0 * a)
        t1 = (-b + sq) / (2.0 * a)
    t0 = np.clip(t0, 0.0, 1.0)
    t1 = np.clip(t1, 0.0, 1.0)
    chord = np.where(valid, (t1 - t0) * np.sqrt(a), 0.0)
    return np.maximum(chord, 0.0)


def mirror_points_across_plane(
    points: np.ndarray, plane_point: np.ndarray, plane_normal: np.ndarray
) -> np.ndarray:
    """Reflect 3-D points (..., 3) across the plane (point, unit normal)."""
    pts = np.asarray(points, dtype=float)
    n = np.asarray(plane_normal, dtype=float)
    s = np.einsum("...j,j->...", pts - plane_point, n)
    return pts - 2.0 * s[..., None] * n


def max_pairwise_distance(points: np.ndarray) -> float:
    """Largest pairwise distance among points (n, d). O(n^2), n is small."""
    pts = np.asarray(points, dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())
