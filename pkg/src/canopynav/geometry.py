"""Small geometry helpers shared by the planner, corridor, sensing, and metrics.

Everything works on plain numpy arrays: points are shape (3,), polylines are
(n, 3). Functions here are the readable reference implementations; the hot
loops (ray casting, search) carry their own numba copies.
"""

from __future__ import annotations

import math

import numpy as np


def point_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Distance from point ``p`` to segment ``a``-``b``.

    Returns ``(distance, s)`` where ``s`` in [0, 1] is the parameter of the
    closest point ``a + s*(b - a)``. A degenerate segment collapses to the
    point distance with ``s = 0``.
    """
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a)), 0.0
    s = float(np.dot(p - a, ab)) / denom
    s = min(1.0, max(0.0, s))
    closest = a + s * ab
    return float(np.linalg.norm(p - closest)), s


def point_to_polyline(p: np.ndarray, waypoints: np.ndarray) -> float:
    """Minimum point-to-segment distance over all polyline segments."""
    pts = np.asarray(waypoints, dtype=float)
    if pts.shape[0] == 1:
        return float(np.linalg.norm(p - pts[0]))
    best = math.inf
    for i in range(pts.shape[0] - 1):
        d, _ = point_to_segment(p, pts[i], pts[i + 1])
        if d < best:
            best = d
    return best


def polyline_arclength(waypoints: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each waypoint, starting at 0."""
    pts = np.asarray(waypoints, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate(([0.0], np.cumsum(seg)))


def point_at_arc(waypoints: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    """Point on the polyline at arc length ``s`` (clamped to the ends)."""
    pts = np.asarray(waypoints, dtype=float)
    total = cum[-1]
    if s <= 0.0:
        return pts[0].copy()
    if s >= total:
        return pts[-1].copy()
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, pts.shape[0] - 2)
    seg_len = cum[i + 1] - cum[i]
    frac = 0.0 if seg_len == 0.0 else (s - cum[i]) / seg_len
    return pts[i] + frac * (pts[i + 1] - pts[i])


def tangent_at_arc(waypoints: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    """Unit tangent of the segment containing arc length ``s``."""
    pts = np.asarray(waypoints, dtype=float)
    if pts.shape[0] < 2:
        return np.zeros(3)
    i = int(np.searchsorted(cum, min(max(s, 0.0), cum[-1]), side="right") - 1)
    i = min(max(i, 0), pts.shape[0] - 2)
    # Skip zero-length segments (shouldn't occur in valid reference paths).
    d = pts[i + 1] - pts[i]
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return np.zeros(3)
    return d / n


def project_to_polyline(
    p: np.ndarray, waypoints: np.ndarray, cum: np.ndarray
) -> tuple[float, float]:
    """Arc length and distance of the closest point on the polyline to ``p``.

    Ties across segments resolve to the earliest arc length, which keeps the
    projection deterministic when a path doubles back.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.shape[0] == 1:
        return 0.0, float(np.linalg.norm(p - pts[0]))
    best_d = math.inf
    best_s = 0.0
    for i in range(pts.shape[0] - 1):
        d, frac = point_to_segment(p, pts[i], pts[i + 1])
        if d < best_d - 1e-12:
            best_d = d
            best_s = cum[i] + frac * (cum[i + 1] - cum[i])
    return best_s, best_d


def segment_frame(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Right-handed orthonormal frame (rows) with the first axis along a->b.

    The second axis is chosen horizontal when possible so corridor boxes stay
    upright-ish, which makes their growth order predictable.
    """
    s = b - a
    n = float(np.linalg.norm(s))
    if n == 0.0:
        raise ValueError("zero-length segment has no frame")
    s = s / n
    up = np.array([0.0, 0.0, 1.0])
    t = np.cross(up, s)
    tn = float(np.linalg.norm(t))
    if tn < 1e-9:
        # Vertical segment: fall back on the x axis.
        t = np.cross(np.array([1.0, 0.0, 0.0]), s)
        tn = float(np.linalg.norm(t))
    t = t / tn
    u = np.cross(s, t)
    return np.stack([s, t, u])


def rotation_about_y(angle: float) -> np.ndarray:
    """Rotation matrix about the world y axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_aligning(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation matrix R with R @ a/|a| = b/|b|.

    Antiparallel inputs rotate half a turn about an arbitrary axis
    orthogonal to ``a``; that case is degenerate by nature and callers
    here never hit it with physically meaningful data.
    """
    u = np.asarray(a, dtype=float)
    v = np.asarray(b, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    c = float(np.dot(u, v))
    w = np.cross(u, v)
    if c < -1.0 + 1e-12:
        axis = np.cross(u, np.array([1.0, 0.0, 0.0]))
        if np.dot(axis, axis) < 1e-12:
            axis = np.cross(u, np.array([0.0, 1.0, 0.0]))
        axis = axis / np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    skew = np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )
    return np.eye(3) + skew + skew @ skew / (1.0 + c)


def capsule_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray, r: float) -> float:
    """Signed distance from ``p`` to a capsule's surface (negative inside)."""
    d, _ = point_to_segment(p, a, b)
    return d - r


def ray_capsule(o: np.ndarray, d: np.ndarray, a: np.ndarray, b: np.ndarray, r: float) -> float:
    """First intersection parameter t >= 0 of ray o + t*d with a capsule.

    Returns inf when the ray misses, 0 when the origin is already inside.
    ``d`` must be unit length. The cylinder body and the two sphere caps are
    solved separately; the smallest valid root wins.
    """
    if capsule_distance(o, a, b, r) <= 0.0:
        return 0.0
    best = math.inf
    ba = b - a
    baba = float(np.dot(ba, ba))
    oa = o - a
    if baba > 0.0:
        # Infinite cylinder about the axis, then clamp to the segment span.
        bard = float(np.dot(ba, d))
        baoa = float(np.dot(ba, oa))
        k2 = baba - bard * bard
        k1 = baba * float(np.dot(oa, d)) - baoa * bard
        k0 = baba * float(np.dot(oa, oa)) - baoa * baoa - r * r * baba
        if abs(k2) > 1e-12:
            h = k1 * k1 - k2 * k0
            if h >= 0.0:
                t = (-k1 - math.sqrt(h)) / k2
                if t >= 0.0:
                    y = baoa + t * bard
                    if 0.0 <= y <= baba:
                        best = t
    for cap in (a, b):
        oc = o - cap
        bq = float(np.dot(oc, d))
        cq = float(np.dot(oc, oc)) - r * r
        h = bq * bq - cq
        if h >= 0.0:
            t = -bq - math.sqrt(h)
            if 0.0 <= t < best:
                best = t
    return best
