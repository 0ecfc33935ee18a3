"""Timestamped occupancy voxel map with decay-based forgetting and inflation.

The map stores, per voxel, the time of the most recent lidar hit. A voxel is
occupied at query time ``t`` when ``t - last_hit <= forget_after``; that one
expression is the single source of truth and every kernel repeats it verbatim
so queries never disagree between Python and numba paths.

Inflation is maintained incrementally: alongside ``last_hit`` the map keeps
``inflated_last_hit``, the max of ``last_hit`` over a precomputed voxel ball.
Because timestamps only ever increase, scatter-max updates on integration
produce exactly the array an on-demand neighborhood max would (a property
test pins this down).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


class NoFreeVoxel(RuntimeError):
    """No traversable voxel found within the allowed search radius."""


def ball_offsets(radius_voxels: float) -> np.ndarray:
    """Integer offsets with center distance <= radius (in voxels), (K, 3)."""
    r = int(math.floor(radius_voxels))
    rng = np.arange(-r, r + 1)
    dx, dy, dz = np.meshgrid(rng, rng, rng, indexing="ij")
    mask = dx**2 + dy**2 + dz**2 <= radius_voxels * radius_voxels
    out = np.stack([dx[mask], dy[mask], dz[mask]], axis=1)
    return np.ascontiguousarray(out, dtype=np.int64)


def sorted_ball_offsets(radius_voxels: float) -> np.ndarray:
    """Ball offsets ordered by (distance, x, y, z); first entry is (0,0,0)."""
    offs = ball_offsets(radius_voxels)
    d2 = (offs**2).sum(axis=1)
    order = np.lexsort((offs[:, 2], offs[:, 1], offs[:, 0], d2))
    return np.ascontiguousarray(offs[order])


@numba.njit(cache=True)
def _bin_points(points, origin, inv_res, shape):
    """Voxel indices for in-bounds points plus the dropped-point count."""
    n = points.shape[0]
    out = np.empty((n, 3), dtype=np.int64)
    kept = 0
    dropped = 0
    for i in range(n):
        ok = True
        for k in range(3):
            v = math.floor((points[i, k] - origin[k]) * inv_res)
            if v < 0 or v >= shape[k]:
                ok = False
                break
            out[kept, k] = int(v)
        if ok:
            kept += 1
        else:
            dropped += 1
    return out[:kept], dropped


@numba.njit(cache=True)
def _scatter(last_hit, inflated, idxs, offsets, t):
    """Stamp ``t`` at each hit voxel and scatter-max over the inflation ball."""
    nx, ny, nz = last_hit.shape
    for i in range(idxs.shape[0]):
        x, y, z = idxs[i, 0], idxs[i, 1], idxs[i, 2]
        if last_hit[x, y, z] >= t:
            continue  # duplicate hit this scan; ball already stamped
        last_hit[x, y, z] = t
        for j in range(offsets.shape[0]):
            ax = x + offsets[j, 0]
            ay = y + offsets[j, 1]
            az = z + offsets[j, 2]
            if 0 <= ax < nx and 0 <= ay < ny and 0 <= az < nz:
                if inflated[ax, ay, az] < t:
                    inflated[ax, ay, az] = t


@numba.njit(cache=True)
def _nearest_free(inflated, start, offsets, t, forget_after):
    nx, ny, nz = inflated.shape
    for j in range(offsets.shape[0]):
        x = start[0] + offsets[j, 0]
        y = start[1] + offsets[j, 1]
        z = start[2] + offsets[j, 2]
        if 0 <= x < nx and 0 <= y < ny and 0 <= z < nz:
            if not (t - inflated[x, y, z] <= forget_after):
                return x, y, z
    return -1, -1, -1


@numba.njit(cache=True)
def _collect_fresh(stamps, lo, hi, t, forget_after):
    """Indices of fresh-stamped voxels in the half-open index box."""
    count = 0
    for x in range(lo[0], hi[0]):
        for y in range(lo[1], hi[1]):
            for z in range(lo[2], hi[2]):
                if t - stamps[x, y, z] <= forget_after:
                    count += 1
    out = np.empty((count, 3), dtype=np.int64)
    k = 0
    for x in range(lo[0], hi[0]):
        for y in range(lo[1], hi[1]):
            for z in range(lo[2], hi[2]):
                if t - stamps[x, y, z] <= forget_after:
                    out[k, 0] = x
                    out[k, 1] = y
                    out[k, 2] = z
                    k += 1
    return out


@numba.njit(cache=True)
def _segment_blocked(inflated, origin, inv_res, a, b, t, forget_after):
    """Whether segment a-b passes through any inflated-occupied voxel.

    Conservative sampling at quarter-voxel steps; endpoints included. Points
    outside the map count as blocked.
    """
    nx, ny, nz = inflated.shape
    length = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
    steps = max(1, int(length * inv_res * 4.0) + 1)
    for s in range(steps + 1):
        f = s / steps
        px = a[0] + f * (b[0] - a[0])
        py = a[1] + f * (b[1] - a[1])
        pz = a[2] + f * (b[2] - a[2])
        x = int(math.floor((px - origin[0]) * inv_res))
        y = int(math.floor((py - origin[1]) * inv_res))
        z = int(math.floor((pz - origin[2]) * inv_res))
        if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
            return True
        if t - inflated[x, y, z] <= forget_after:
            return True
    return False


@dataclass
class VoxelMap:
    """Dense voxel occupancy map over an axis-aligned box.

    ``lower``/``upper`` are world-frame corners; the grid uses floor binning
    with voxel centers at ``lower + (index + 0.5) * resolution``.
    """

    lower: np.ndarray
    upper: np.ndarray
    resolution: float = 0.1
    forget_after: float = 30.0
    inflation_radius: float = 0.4
    floor_below: float | None = None

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != (3,) or self.upper.shape != (3,):
            raise ValueError("map corners must be 3-vectors")
        if np.any(self.upper <= self.lower):
            raise ValueError("upper corner must exceed lower corner")
        if self.resolution <= 0.0 or self.forget_after <= 0.0:
            raise ValueError("resolution and forget_after must be positive")
        self.shape = tuple(
            int(round((self.upper[k] - self.lower[k]) / self.resolution)) for k in range(3)
        )
        if min(self.shape) < 1:
            raise ValueError("map must span at least one voxel per axis")
        self._shape_arr = np.array(self.shape, dtype=np.int64)
        self.last_hit = np.full(self.shape, -np.inf, dtype=np.float64)
        self.inflated_last_hit = np.full(self.shape, -np.inf, dtype=np.float64)
        self._ball = ball_offsets(self.inflation_radius / self.resolution)
        self._nearest_offsets: np.ndarray | None = None
        self.dropped_total = 0
        if self.floor_below is not None:
            # Terrain prior: the ground plane is known at takeoff and is not
            # a dynamic obstacle, so it must never expire. Layers whose
            # centers sit at or below the threshold are stamped +inf, which
            # every update path already treats as unbeatable; the inflated
            # band above gets the same treatment, matching exactly what
            # scatter updates would produce for a solid plane of hits.
            layers = int(
                math.floor((self.floor_below - self.lower[2]) / self.resolution + 0.5)
            )
            layers = min(max(layers, 0), self.shape[2])
            if layers > 0:
                self.last_hit[:, :, :layers] = np.inf
                reach = int(math.floor(self.inflation_radius / self.resolution))
                self.inflated_last_hit[:, :, : min(layers + reach, self.shape[2])] = np.inf

    # -- coordinates --------------------------------------------------------

    def world_to_index(self, p: np.ndarray) -> np.ndarray:
        """Voxel index of a world point (may be out of bounds; no clamping)."""
        return np.floor((np.asarray(p, dtype=np.float64) - self.lower) / self.resolution).astype(
            np.int64
        )

    def index_to_center(self, idx: np.ndarray) -> np.ndarray:
        return self.lower + (np.asarray(idx, dtype=np.float64) + 0.5) * self.resolution

    def in_bounds(self, idx: np.ndarray) -> bool:
        idx = np.asarray(idx)
        return bool(np.all(idx >= 0) and np.all(idx < self._shape_arr))

    # -- updates -------------------------------------------------------------

    def integrate_scan(self, points: np.ndarray, t: float) -> int:
        """Stamp hit voxels (and their inflation balls) with time ``t``.

        Returns the number of points dropped for being outside the map.
        """
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (n, 3)")
        idxs, dropped = _bin_points(pts, self.lower, 1.0 / self.resolution, self._shape_arr)
        _scatter(self.last_hit, self.inflated_last_hit, idxs, self._ball, float(t))
        self.dropped_total += int(dropped)
        return int(dropped)

    # -- queries -------------------------------------------------------------

    def occupied(self, idx: np.ndarray, t: float) -> bool:
        i, j, k = (int(v) for v in idx)
        return bool(t - self.last_hit[i, j, k] <= self.forget_after)

    def inflated_occupied(self, idx: np.ndarray, t: float) -> bool:
        i, j, k = (int(v) for v in idx)
        return bool(t - self.inflated_last_hit[i, j, k] <= self.forget_after)

    def nearest_free(self, p: np.ndarray, t: float, max_radius: float = 3.0) -> np.ndarray:
        """Index of the closest non-inflated-occupied voxel to world point ``p``.

        Candidates are ordered by center distance from the containing voxel
        with lexicographic index tie-breaks, so the result is deterministic.
        Raises NoFreeVoxel when everything within ``max_radius`` is occupied,
        and ValueError when ``p`` itself is outside the map.
        """
        start = self.world_to_index(p)
        if not self.in_bounds(start):
            raise ValueError("query point outside the map")
        r_vox = max_radius / self.resolution
        if self._nearest_offsets is None or self._nearest_radius < r_vox:
            self._nearest_offsets = sorted_ball_offsets(r_vox)
            self._nearest_radius = r_vox
        x, y, z = _nearest_free(
            self.inflated_last_hit,
            start,
            self._nearest_offsets,
            float(t),
            self.forget_after,
        )
        if x < 0:
            raise NoFreeVoxel(f"no free voxel within {max_radius} m")
        return np.array([x, y, z], dtype=np.int64)

    def segment_blocked(self, a: np.ndarray, b: np.ndarray, t: float) -> bool:
        """True when the world-frame segment grazes inflated-occupied space."""
        return bool(
            _segment_blocked(
                self.inflated_last_hit,
                self.lower,
                1.0 / self.resolution,
                np.asarray(a, dtype=np.float64),
                np.asarray(b, dtype=np.float64),
                float(t),
                self.forget_after,
            )
        )

    def occupied_centers(
        self, lo_world: np.ndarray, hi_world: np.ndarray, t: float
    ) -> np.ndarray:
        """Centers of occupied (raw hit) voxels inside a world AABB, (M, 3)."""
        return self._centers(self.last_hit, lo_world, hi_world, t)

    def inflated_occupied_centers(
        self, lo_world: np.ndarray, hi_world: np.ndarray, t: float
    ) -> np.ndarray:
        """Centers of inflated-occupied voxels inside a world AABB, (M, 3)."""
        return self._centers(self.inflated_last_hit, lo_world, hi_world, t)

    def _centers(self, stamps, lo_world, hi_world, t: float) -> np.ndarray:
        lo = np.maximum(self.world_to_index(lo_world), 0)
        hi = np.minimum(self.world_to_index(hi_world) + 1, self._shape_arr)
        if np.any(hi <= lo):
            return np.empty((0, 3))
        idxs = _collect_fresh(stamps, lo, hi, float(t), self.forget_after)
        return self.lower + (idxs.astype(np.float64) + 0.5) * self.resolution

    def occupied_cells(self, t: float) -> np.ndarray:
        """(M, 4) array of occupied voxels as (i, j, k, last_hit) rows."""
        mask = (t - self.last_hit) <= self.forget_after
        idx = np.argwhere(mask)
        stamps = self.last_hit[mask][:, None]
        return np.hstack([idx.astype(np.float64), stamps])

    @property
    def voxel_count(self) -> int:
        return int(np.prod(self._shape_arr))
