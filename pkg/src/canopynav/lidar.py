"""Spinning-lidar sensing model over capsule scenes.

Ray directions follow the R2 low-discrepancy sequence mapped onto the
sensor's field of view, with a global ray counter carried across scans so
the pattern never repeats. Each ray reports the nearest capsule or ground
intersection within range.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

FOV_AZIMUTH_RAD = 2.0 * math.pi
FOV_ELEVATION_MIN_RAD = math.radians(-7.0)
FOV_ELEVATION_MAX_RAD = math.radians(52.0)
MAX_RANGE = 30.0
MAX_RAYS_PER_SCAN = 20_000

# Plastic constant; 1/g and 1/g^2 are the R2 sequence increments.
_PLASTIC = 1.3247179572447458
_R2_A1 = 1.0 / _PLASTIC
_R2_A2 = 1.0 / (_PLASTIC * _PLASTIC)

_SECTORS = 128


def ray_directions(start_index: int, count: int, yaw: float = 0.0) -> np.ndarray:
    """Unit directions for rays `start_index .. start_index+count-1`.

    `yaw` rotates the whole pattern about z, modelling the heading the
    sensor happened to be mounted at for a particular flight.
    """
    n = np.arange(start_index + 1, start_index + count + 1, dtype=np.float64)
    u1 = np.mod(0.5 + _R2_A1 * n, 1.0)
    u2 = np.mod(0.5 + _R2_A2 * n, 1.0)
    azimuth = FOV_AZIMUTH_RAD * u1 + yaw
    elevation = FOV_ELEVATION_MIN_RAD + (FOV_ELEVATION_MAX_RAD - FOV_ELEVATION_MIN_RAD) * u2
    ce = np.cos(elevation)
    out = np.empty((count, 3))
    out[:, 0] = ce * np.cos(azimuth)
    out[:, 1] = ce * np.sin(azimuth)
    out[:, 2] = np.sin(elevation)
    return out


@njit(cache=True)
def _ray_capsule_t(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, r):
    """Smallest t >= 0 with origin + t*dir on the capsule, inf on miss.

    An origin already inside the capsule reports t = 0.
    """
    ux = bx - ax
    uy = by - ay
    uz = bz - az
    wx = ox - ax
    wy = oy - ay
    wz = oz - az

    uu = ux * ux + uy * uy + uz * uz
    if uu > 0.0:
        s = (wx * ux + wy * uy + wz * uz) / uu
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        cx = wx - s * ux
        cy = wy - s * uy
        cz = wz - s * uz
    else:
        cx = wx
        cy = wy
        cz = wz
    if cx * cx + cy * cy + cz * cz <= r * r:
        return 0.0

    best = np.inf
    if uu > 0.0:
        # Infinite-cylinder intersection: components orthogonal to the axis.
        du = (dx * ux + dy * uy + dz * uz) / uu
        wu = (wx * ux + wy * uy + wz * uz) / uu
        qx = dx - du * ux
        qy = dy - du * uy
        qz = dz - du * uz
        px = wx - wu * ux
        py = wy - wu * uy
        pz = wz - wu * uz
        a2 = qx * qx + qy * qy + qz * qz
        if a2 > 0.0:
            b2 = px * qx + py * qy + pz * qz
            c2 = px * px + py * py + pz * pz - r * r
            disc = b2 * b2 - a2 * c2
            if disc >= 0.0:
                root = math.sqrt(disc)
                for sign in (-1.0, 1.0):
                    t = (-b2 + sign * root) / a2
                    if 0.0 <= t < best:
                        s = wu + t * du
                        if 0.0 <= s <= 1.0:
                            best = t

    # End-cap spheres.
    for ex, ey, ez in ((ax, ay, az), (bx, by, bz)):
        fx = ox - ex
        fy = oy - ey
        fz = oz - ez
        b2 = fx * dx + fy * dy + fz * dz
        c2 = fx * fx + fy * fy + fz * fz - r * r
        disc = b2 * b2 - c2
        if disc >= 0.0:
            root = math.sqrt(disc)
            for sign in (-1.0, 1.0):
                t = -b2 + sign * root
                if 0.0 <= t < best:
                    best = t
    return best


@njit(cache=True)
def _bin_sectors(ox, oy, seg_a, seg_b, radius, max_range, counts, hits_all):
    """First pass: per-sector candidate counts, via subtended azimuths.

    Returns per-capsule encoded sector spans: (first_sector, span_count),
    with span_count = _SECTORS meaning "all sectors". Capsules entirely
    out of range get span_count = 0.
    """
    n = seg_a.shape[0]
    spans = np.zeros((n, 2), dtype=np.int64)
    two_pi = 2.0 * math.pi
    width = two_pi / _SECTORS
    for i in range(n):
        axr = seg_a[i, 0] - ox
        ayr = seg_a[i, 1] - oy
        bxr = seg_b[i, 0] - ox
        byr = seg_b[i, 1] - oy

        # Range cull on 2D segment distance (3D distance is >= 2D).
        ux = bxr - axr
        uy = byr - ayr
        denom = ux * ux + uy * uy
        s = 0.0
        if denom > 0.0:
            s = -(axr * ux + ayr * uy) / denom
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
        mx = axr + s * ux
        my = ayr + s * uy
        dmin = math.sqrt(mx * mx + my * my)
        if dmin - radius[i] > max_range:
            continue

        if dmin <= radius[i]:
            # Sensor effectively on the capsule axis in xy: every azimuth
            # can graze it, so register in all sectors.
            spans[i, 0] = 0
            spans[i, 1] = _SECTORS
            hits_all[0] = True
            for c in range(_SECTORS):
                counts[c] += 1
            continue

        az_a = math.atan2(ayr, axr)
        az_b = math.atan2(byr, bxr)
        delta = az_b - az_a
        while delta > math.pi:
            delta -= two_pi
        while delta < -math.pi:
            delta += two_pi
        if delta < 0.0:
            az_a = az_b
            delta = -delta
        half_extra = math.asin(min(1.0, radius[i] / dmin))
        lo = az_a - half_extra - width
        hi = az_a + delta + half_extra + width
        span = int(math.ceil((hi - lo) / width)) + 1
        if span >= _SECTORS:
            spans[i, 0] = 0
            spans[i, 1] = _SECTORS
            for c in range(_SECTORS):
                counts[c] += 1
            continue
        first = int(math.floor(lo / width))
        spans[i, 0] = first
        spans[i, 1] = span
        for k in range(span):
            c = (first + k) % _SECTORS
            counts[c] += 1
    return spans


@njit(cache=True)
def _cast_kernel(
    origin, dirs, seg_a, seg_b, radius, max_range, ground_z,
    out_points, out_range,
):
    ox = origin[0]
    oy = origin[1]
    oz = origin[2]
    counts = np.zeros(_SECTORS, dtype=np.int64)
    hits_all = np.zeros(1, dtype=np.bool_)
    spans = _bin_sectors(ox, oy, seg_a, seg_b, radius, max_range, counts, hits_all)

    start = np.zeros(_SECTORS + 1, dtype=np.int64)
    for c in range(_SECTORS):
        start[c + 1] = start[c] + counts[c]
    items = np.zeros(start[_SECTORS], dtype=np.int64)
    cursor = start[:_SECTORS].copy()
    for i in range(spans.shape[0]):
        span = spans[i, 1]
        if span == 0:
            continue
        first = spans[i, 0]
        for k in range(span):
            c = (first + k) % _SECTORS
            items[cursor[c]] = i
            cursor[c] += 1

    two_pi = 2.0 * math.pi
    n_rays = dirs.shape[0]
    n_out = 0
    for j in range(n_rays):
        dx = dirs[j, 0]
        dy = dirs[j, 1]
        dz = dirs[j, 2]
        best = np.inf
        if dz < 0.0:
            t = (ground_z - oz) / dz
            if t >= 0.0:
                best = t
        az = math.atan2(dy, dx)
        if az < 0.0:
            az += two_pi
        c = int(az / two_pi * _SECTORS)
        if c >= _SECTORS:
            c = _SECTORS - 1
        for k in range(start[c], start[c + 1]):
            i = items[k]
            t = _ray_capsule_t(
                ox, oy, oz, dx, dy, dz,
                seg_a[i, 0], seg_a[i, 1], seg_a[i, 2],
                seg_b[i, 0], seg_b[i, 1], seg_b[i, 2],
                radius[i],
            )
            if t < best:
                best = t
        if best <= max_range:
            out_points[n_out, 0] = ox + best * dx
            out_points[n_out, 1] = oy + best * dy
            out_points[n_out, 2] = oz + best * dz
            out_range[n_out] = best
            n_out += 1
    return n_out


def cast_rays(
    origin: np.ndarray,
    dirs: np.ndarray,
    seg_a: np.ndarray,
    seg_b: np.ndarray,
    radius: np.ndarray,
    max_range: float = MAX_RANGE,
    ground_z: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """First-hit points for a batch of rays; misses are dropped.

    Returns (points, ranges) with one row per ray that hit something
    within `max_range`. Candidate capsules per ray come from an azimuth
    sector binning rebuilt per call, which is why the batch interface
    exists: bin once, trace thousands.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    out_points = np.empty((dirs.shape[0], 3))
    out_range = np.empty(dirs.shape[0])
    n = _cast_kernel(
        origin, dirs, seg_a, seg_b, radius,
        float(max_range), float(ground_z), out_points, out_range,
    )
    return out_points[:n].copy(), out_range[:n].copy()
