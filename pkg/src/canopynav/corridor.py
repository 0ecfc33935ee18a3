"""Safe flight corridor: two convex polyhedra covering the next path segments.

Each polyhedron is an oriented box aligned to one pruned-path segment. The
box starts as a thin sleeve around the segment, grows face by face in fixed
round-robin order until a face would capture an inflated-occupied voxel
center (or hits the growth cap), then every face retreats by a safety margin
that never pushes the segment outside. Exclusion of occupied centers is
therefore structural: the shrunk box is a subset of the grown one.

All face normals are unit length and constraints read ``normal . p <= offset``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .geometry import segment_frame
from .mapping import VoxelMap


class NaNDetected(ValueError):
    """A corridor computation produced or received a non-finite value."""


class DegenerateSegment(ValueError):
    """Corridor requested over a zero-length path segment."""


@dataclass(frozen=True)
class CorridorParams:
    seed_half_width: float = 0.05
    growth_step: float = 0.1
    max_extent: float = 3.0
    shrink: float = 0.4
    keep_inside: float = 0.01


@dataclass(frozen=True)
class Polyhedron:
    """Intersection of halfspaces ``normals @ p <= offsets``."""

    normals: np.ndarray
    offsets: np.ndarray

    def margin(self, p: np.ndarray) -> float:
        """Largest constraint value at ``p``; <= 0 means inside."""
        return float(np.max(self.normals @ np.asarray(p, dtype=np.float64) - self.offsets))

    def contains(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        return self.margin(p) <= tol


@dataclass(frozen=True)
class Corridor:
    """Two polyhedra covering the first two segments of a pruned path."""

    polyhedra: tuple[Polyhedron, Polyhedron]
    waypoints: np.ndarray  # (3, 3): start, split point, end
    split_arc: float       # arc length where assignment hands over

    def polyhedron_at(self, arc: float) -> Polyhedron:
        return self.polyhedra[0] if arc <= self.split_arc else self.polyhedra[1]


@numba.njit(cache=True)
def _strict_insiders(pts, lo, hi):
    """Indices of points strictly inside the box, in input order."""
    count = 0
    for i in range(pts.shape[0]):
        if (
            pts[i, 0] > lo[0]
            and pts[i, 0] < hi[0]
            and pts[i, 1] > lo[1]
            and pts[i, 1] < hi[1]
            and pts[i, 2] > lo[2]
            and pts[i, 2] < hi[2]
        ):
            count += 1
    out = np.empty(count, dtype=np.int64)
    k = 0
    for i in range(pts.shape[0]):
        if (
            pts[i, 0] > lo[0]
            and pts[i, 0] < hi[0]
            and pts[i, 1] > lo[1]
            and pts[i, 1] < hi[1]
            and pts[i, 2] > lo[2]
            and pts[i, 2] < hi[2]
        ):
            out[k] = i
            k += 1
    return out


@numba.njit(cache=True)
def _any_inside(locals_, lo, hi):
    for i in range(locals_.shape[0]):
        if (
            locals_[i, 0] > lo[0] - 1e-9
            and locals_[i, 0] < hi[0] + 1e-9
            and locals_[i, 1] > lo[1] - 1e-9
            and locals_[i, 1] < hi[1] + 1e-9
            and locals_[i, 2] > lo[2] - 1e-9
            and locals_[i, 2] < hi[2] + 1e-9
        ):
            return True
    return False


def _grow_box(length: float, pts_local: np.ndarray, params: CorridorParams) -> np.ndarray:
    """Face extents (+s, -s, +t, -t, +u, -u) measured from the segment hull.

    A center already inside the seed sleeve (possible when the path is stale
    relative to the map) simply blocks all growth; the shrink step then pulls
    every face back to the keep-inside margin.
    """
    ext = np.full(6, params.seed_half_width)
    growing = [True] * 6
    while any(growing):
        for face in range(6):
            if not growing[face]:
                continue
            if ext[face] + params.growth_step > params.max_extent:
                growing[face] = False
                continue
            ext[face] += params.growth_step
            if _any_inside(pts_local, *_box_bounds(length, ext)):
                ext[face] -= params.growth_step
                growing[face] = False
    return ext


def _box_bounds(length: float, ext: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([-ext[1], -ext[3], -ext[5]])
    hi = np.array([length + ext[0], ext[2], ext[4]])
    return lo, hi


def _box_polyhedron(
    a: np.ndarray, frame: np.ndarray, length: float, ext: np.ndarray
) -> Polyhedron:
    s_axis, t_axis, u_axis = frame[0], frame[1], frame[2]
    normals = np.stack([s_axis, -s_axis, t_axis, -t_axis, u_axis, -u_axis])
    seg_extent = np.array([length, 0.0, 0.0, 0.0, 0.0, 0.0])
    offsets = np.array(
        [
            float(normals[i] @ a) + seg_extent[i] + ext[i]
            for i in range(6)
        ]
    )
    return Polyhedron(normals=normals, offsets=offsets)


def _exclude_inflated(
    length: float, ext: np.ndarray, pts_local: np.ndarray, params: CorridorParams
) -> np.ndarray:
    """Pull faces in until no inflated-occupied center is strictly inside.

    Shrinking by the drone clearance keeps inflated centers out wherever the
    full retreat happened, but a face floored at the keep-inside margin can
    still admit shell voxels near corners. Each offender is evicted through
    the face that loses the least room (the largest local coordinate); such
    a face always exists above the floor because an inflated center can
    never sit closer to the segment than half a voxel ball.
    """
    if pts_local.shape[0] == 0:
        return ext
    lo, hi = _box_bounds(length, ext - 1e-12)
    idx = _strict_insiders(pts_local, lo, hi)
    if idx.shape[0] == 0:
        return ext
    # required[j, f]: face-f extent at which offender j sits exactly on face f.
    pts = pts_local[idx]
    pts = pts[np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))]
    required = np.stack(
        [pts[:, 0] - length, -pts[:, 0], pts[:, 1], -pts[:, 1], pts[:, 2], -pts[:, 2]],
        axis=1,
    )
    ext = ext.copy()
    immovable = np.zeros(pts.shape[0], dtype=bool)
    while True:
        inside = np.all(required < ext[None, :] - 1e-12, axis=1) & ~immovable
        if not inside.any():
            return ext
        j = int(np.argmax(inside))
        cand = np.where(required[j] >= params.keep_inside, required[j], -np.inf)
        best = float(cand.max())
        if not np.isfinite(best):
            # Only possible when keep_inside crowds half the voxel ball;
            # leave the offender rather than collapse the box.
            immovable[j] = True
            continue
        ext[int(np.argmax(cand))] = best


def _segment_polyhedron(
    vmap: VoxelMap, a: np.ndarray, b: np.ndarray, t: float, params: CorridorParams
) -> Polyhedron:
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise NaNDetected("segment endpoint is not finite")
    if float(np.linalg.norm(b - a)) == 0.0:
        raise DegenerateSegment("cannot build a corridor around a point")
    frame = segment_frame(a, b)
    length = float(np.linalg.norm(b - a))
    # Collect exclusion points from the largest box this segment can grow.
    lo_w, hi_w = _reach_aabb(a, frame, length, params.max_extent + vmap.resolution)
    centers, shell = _exclusion_sets(vmap, lo_w, hi_w, t)
    return _points_polyhedron(a, frame, length, centers, shell, params)


def _reach_aabb(
    a: np.ndarray, frame: np.ndarray, length: float, reach: float
) -> tuple[np.ndarray, np.ndarray]:
    """World AABB of the largest box the segment can grow (rotated corners)."""
    corners_local = np.array(
        [
            [x, y, z]
            for x in (-reach, length + reach)
            for y in (-reach, reach)
            for z in (-reach, reach)
        ]
    )
    corners_world = a[None, :] + corners_local @ frame
    return corners_world.min(axis=0), corners_world.max(axis=0)


def _exclusion_sets(vmap: VoxelMap, lo_w, hi_w, t: float):
    return (
        vmap.occupied_centers(lo_w, hi_w, t),
        vmap.inflated_occupied_centers(lo_w, hi_w, t),
    )


def _points_polyhedron(
    a: np.ndarray,
    frame: np.ndarray,
    length: float,
    centers: np.ndarray,
    shell: np.ndarray,
    params: CorridorParams,
) -> Polyhedron:
    pts_local = (
        (centers - a[None, :]) @ frame.T if centers.shape[0] else np.empty((0, 3))
    )
    ext = _grow_box(length, np.ascontiguousarray(pts_local), params)
    ext = ext - np.minimum(params.shrink, np.maximum(ext - params.keep_inside, 0.0))
    shell_local = (
        (shell - a[None, :]) @ frame.T if shell.shape[0] else np.empty((0, 3))
    )
    ext = _exclude_inflated(length, ext, shell_local, params)
    return _box_polyhedron(a, frame, length, ext)


def validate(poly: Polyhedron) -> Polyhedron:
    if not (np.all(np.isfinite(poly.normals)) and np.all(np.isfinite(poly.offsets))):
        raise NaNDetected("corridor polyhedron contains non-finite entries")
    return poly


def build_corridor(
    vmap: VoxelMap,
    waypoints: np.ndarray,
    t: float,
    params: CorridorParams | None = None,
    corrupt: Callable[[np.ndarray], np.ndarray] | None = None,
) -> Corridor:
    """Corridor over the first two segments of a pruned path.

    A two-point path is split at its midpoint so there are always exactly two
    polyhedra. ``corrupt``, when given, post-processes each polyhedron's
    offsets (the fault-injection hook used to exercise non-finite handling);
    its output still goes through validation, so injected NaNs raise
    NaNDetected exactly like organically produced ones.
    """
    params = params or CorridorParams()
    wp = np.asarray(waypoints, dtype=np.float64)
    if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 3:
        raise ValueError("corridor needs a path of at least two waypoints")
    if not np.all(np.isfinite(wp)):
        raise NaNDetected("path waypoint is not finite")
    if wp.shape[0] >= 3:
        tri = wp[:3].copy()
    else:
        tri = np.stack([wp[0], 0.5 * (wp[0] + wp[1]), wp[1]])
    segments = ((tri[0], tri[1]), (tri[1], tri[2]))
    for a, b in segments:
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise NaNDetected("segment endpoint is not finite")
        if float(np.linalg.norm(b - a)) == 0.0:
            raise DegenerateSegment("cannot build a corridor around a point")
    # Both segments share one map query over the union of their grow reaches;
    # the exact local-bounds tests ignore the extra points, so each box comes
    # out identical to a per-segment query.
    reach = params.max_extent + vmap.resolution
    frames = [segment_frame(a, b) for a, b in segments]
    lengths = [float(np.linalg.norm(b - a)) for a, b in segments]
    aabbs = [
        _reach_aabb(a, frame, length, reach)
        for (a, _), frame, length in zip(segments, frames, lengths)
    ]
    lo_w = np.minimum(aabbs[0][0], aabbs[1][0])
    hi_w = np.maximum(aabbs[0][1], aabbs[1][1])
    centers, shell = _exclusion_sets(vmap, lo_w, hi_w, t)
    polys = []
    for (a, _), frame, length in zip(segments, frames, lengths):
        poly = _points_polyhedron(a, frame, length, centers, shell, params)
        if corrupt is not None:
            poly = Polyhedron(normals=poly.normals, offsets=corrupt(poly.offsets.copy()))
        polys.append(validate(poly))
    split = float(np.linalg.norm(tri[1] - tri[0]))
    return Corridor(polyhedra=(polys[0], polys[1]), waypoints=tri, split_arc=split)


def default_bbox(center: np.ndarray, half_extent: float = 1.0) -> Polyhedron:
    """Axis-aligned fallback box used when no trustworthy corridor exists."""
    c = np.asarray(center, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise NaNDetected("bbox center is not finite")
    eye = np.eye(3)
    normals = np.vstack([eye, -eye])
    offsets = np.concatenate([c + half_extent, -(c - half_extent)])
    return Polyhedron(normals=normals, offsets=offsets)
