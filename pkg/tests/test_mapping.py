from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopynav.mapping import NoFreeVoxel, VoxelMap, ball_offsets, sorted_ball_offsets


def small_map(forget_after=30.0):
    return VoxelMap(
        lower=np.array([0.0, 0.0, 0.0]),
        upper=np.array([2.0, 2.0, 1.0]),
        resolution=0.1,
        forget_after=forget_after,
    )


def brute_force_inflated(vmap):
    """Neighborhood max of last_hit over the inflation ball, done naively."""
    offs = ball_offsets(vmap.inflation_radius / vmap.resolution)
    out = np.full(vmap.shape, -np.inf)
    occ = np.argwhere(np.isfinite(vmap.last_hit))
    for i, j, k in occ:
        for dx, dy, dz in offs:
            x, y, z = i + dx, j + dy, k + dz
            if 0 <= x < vmap.shape[0] and 0 <= y < vmap.shape[1] and 0 <= z < vmap.shape[2]:
                out[x, y, z] = max(out[x, y, z], vmap.last_hit[i, j, k])
    return out


def test_inflation_ball_size_for_default_radius():
    # 0.4 m at 0.1 m resolution: integer points with x^2+y^2+z^2 <= 16.
    assert ball_offsets(4.0).shape == (257, 3)


def test_sorted_offsets_start_at_origin_and_are_distance_ordered():
    offs = sorted_ball_offsets(3.0)
    assert tuple(offs[0]) == (0, 0, 0)
    d2 = (offs**2).sum(axis=1)
    assert np.all(np.diff(d2) >= 0)
    # Within a distance shell, ordering is lexicographic.
    shell = offs[d2 == 1]
    assert [tuple(v) for v in shell] == [(-1, 0, 0), (0, -1, 0), (0, 0, -1), (0, 0, 1), (0, 1, 0), (1, 0, 0)]


def test_binning_uses_floor_and_reports_drops():
    m = small_map()
    pts = np.array(
        [
            [0.05, 0.05, 0.05],   # voxel (0,0,0)
            [0.1, 0.1, 0.1],      # exactly on a boundary: floor -> (1,1,1)
            [1.999, 1.999, 0.999],
            [-0.01, 0.5, 0.5],    # out of bounds
            [0.5, 0.5, 1.0],      # z == upper bound: dropped
        ]
    )
    dropped = m.integrate_scan(pts, t=1.0)
    assert dropped == 2
    assert m.dropped_total == 2
    assert m.occupied((0, 0, 0), 1.0)
    assert m.occupied((1, 1, 1), 1.0)
    assert m.occupied((19, 19, 9), 1.0)


def test_center_convention_and_world_roundtrip():
    m = small_map()
    idx = np.array([3, 4, 5])
    c = m.index_to_center(idx)
    assert np.allclose(c, [0.35, 0.45, 0.55])
    assert np.array_equal(m.world_to_index(c), idx)


def test_forgetting_boundary_is_inclusive():
    m = small_map(forget_after=3.0)
    m.integrate_scan(np.array([[0.55, 0.55, 0.55]]), t=10.0)
    idx = (5, 5, 5)
    assert m.occupied(idx, 10.0)
    assert m.occupied(idx, 13.0)          # t - last_hit == forget_after
    assert not m.occupied(idx, 13.0000001)
    assert m.inflated_occupied(idx, 13.0)
    assert not m.inflated_occupied(idx, 13.0000001)


def test_restamping_refreshes_decay():
    m = small_map(forget_after=3.0)
    p = np.array([[0.55, 0.55, 0.55]])
    m.integrate_scan(p, t=0.0)
    m.integrate_scan(p, t=2.5)
    assert m.occupied((5, 5, 5), 5.0)
    assert not m.occupied((5, 5, 5), 5.6)


def test_integration_is_idempotent_within_a_scan():
    m = small_map()
    pts = np.array([[0.55, 0.55, 0.55], [0.55, 0.55, 0.55], [1.05, 0.55, 0.55]])
    m.integrate_scan(pts, t=1.0)
    lh = m.last_hit.copy()
    infl = m.inflated_last_hit.copy()
    m.integrate_scan(pts, t=1.0)
    assert np.array_equal(m.last_hit, lh)
    assert np.array_equal(m.inflated_last_hit, infl)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_incremental_inflation_equals_neighborhood_max(seed):
    rng = np.random.default_rng(seed)
    m = small_map()
    for t in range(1, 4):
        pts = rng.uniform([0, 0, 0], [2, 2, 1], size=(30, 3))
        m.integrate_scan(pts, t=float(t))
    assert np.array_equal(m.inflated_last_hit, brute_force_inflated(m))


def test_inflated_region_extent_matches_radius():
    m = small_map()
    m.integrate_scan(np.array([[1.05, 1.05, 0.55]]), t=0.0)
    # 0.4 m is four voxels: (14, 10, 5) is exactly on the boundary, in;
    # (15, 10, 5) is 0.5 m away, out.
    assert m.inflated_occupied((14, 10, 5), 0.0)
    assert not m.inflated_occupied((15, 10, 5), 0.0)
    # Diagonal: offset (3, 2, 1) has distance sqrt(14) voxels <= 4, in.
    assert m.inflated_occupied((13, 12, 6), 0.0)
    # Offset (3, 3, 0) has distance sqrt(18) > 4, out.
    assert not m.inflated_occupied((13, 13, 5), 0.0)


def nearest_free_oracle(m, p, t, max_radius):
    start = m.world_to_index(p)
    best = None
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            for k in range(m.shape[2]):
                if m.inflated_occupied((i, j, k), t):
                    continue
                d2 = (i - start[0]) ** 2 + (j - start[1]) ** 2 + (k - start[2]) ** 2
                if d2 > (max_radius / m.resolution) ** 2:
                    continue
                key = (d2, i, j, k)
                if best is None or key < best:
                    best = key
    return None if best is None else np.array(best[1:])


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_nearest_free_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    m = small_map()
    pts = rng.uniform([0, 0, 0], [2, 2, 1], size=(40, 3))
    m.integrate_scan(pts, t=0.0)
    q = rng.uniform([0.2, 0.2, 0.2], [1.8, 1.8, 0.8])
    expected = nearest_free_oracle(m, q, 0.0, 1.5)
    if expected is None:
        with pytest.raises(NoFreeVoxel):
            m.nearest_free(q, 0.0, max_radius=1.5)
    else:
        assert np.array_equal(m.nearest_free(q, 0.0, max_radius=1.5), expected)


def test_nearest_free_of_free_voxel_is_itself():
    m = small_map()
    q = np.array([0.55, 0.55, 0.55])
    assert np.array_equal(m.nearest_free(q, 0.0), m.world_to_index(q))


def test_nearest_free_outside_map_raises():
    m = small_map()
    with pytest.raises(ValueError):
        m.nearest_free(np.array([-1.0, 0.5, 0.5]), 0.0)


def test_segment_blocked_classifies_clear_cases():
    m = small_map()
    m.integrate_scan(np.array([[1.05, 1.05, 0.55]]), t=0.0)
    # Straight through the occupied voxel's center.
    assert m.segment_blocked([0.05, 1.05, 0.55], [1.95, 1.05, 0.55], 0.0)
    # Through the inflated shell but not the raw voxel.
    assert m.segment_blocked([0.05, 1.35, 0.55], [1.95, 1.35, 0.55], 0.0)
    # Comfortably outside the inflated region (> 0.45 m from the hit voxel).
    assert not m.segment_blocked([0.05, 0.25, 0.55], [1.95, 0.25, 0.55], 0.0)
    # Leaving the map counts as blocked.
    assert m.segment_blocked([0.05, 0.25, 0.55], [2.5, 0.25, 0.55], 0.0)


def test_segment_blocked_respects_forgetting():
    m = small_map(forget_after=3.0)
    m.integrate_scan(np.array([[1.05, 1.05, 0.55]]), t=0.0)
    seg = ([0.05, 1.05, 0.55], [1.95, 1.05, 0.55])
    assert m.segment_blocked(*seg, 3.0)
    assert not m.segment_blocked(*seg, 3.1)


def test_occupied_cells_reports_indices_and_stamps():
    m = small_map(forget_after=3.0)
    m.integrate_scan(np.array([[0.55, 0.55, 0.55]]), t=1.0)
    m.integrate_scan(np.array([[1.05, 0.55, 0.55]]), t=2.0)
    cells = m.occupied_cells(4.0)
    rows = {tuple(int(v) for v in row[:3]): row[3] for row in cells}
    assert rows == {(5, 5, 5): 1.0, (10, 5, 5): 2.0}
    # After the first stamp decays only the second remains.
    cells = m.occupied_cells(4.5)
    assert cells.shape[0] == 1 and cells[0][3] == 2.0


def test_inflated_centers_in_box():
    m = small_map()
    m.integrate_scan(np.array([[1.05, 1.05, 0.55]]), t=0.0)
    centers = m.inflated_occupied_centers(np.array([0.9, 0.9, 0.4]), np.array([1.2, 1.2, 0.7]), 0.0)
    assert centers.shape[0] > 0
    assert np.all(centers >= [0.9, 0.9, 0.4])
    assert np.all(centers <= [1.25, 1.25, 0.75])
    assert any(np.allclose(c, [1.05, 1.05, 0.55]) for c in centers)


def test_bad_construction_rejected():
    with pytest.raises(ValueError):
        VoxelMap(lower=np.zeros(3), upper=np.zeros(3))
    with pytest.raises(ValueError):
        VoxelMap(lower=np.zeros(3), upper=np.ones(3), resolution=-0.1)
