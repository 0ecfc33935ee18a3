from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canopynav.geometry import (
    capsule_distance,
    point_at_arc,
    point_to_polyline,
    point_to_segment,
    polyline_arclength,
    project_to_polyline,
    ray_capsule,
    rotation_about_y,
    segment_frame,
)

from _oracles import ray_march_capsule

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


def dense_segment_distance(p, a, b, samples=20001):
    ts = np.linspace(0.0, 1.0, samples)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return np.linalg.norm(pts - p[None, :], axis=1).min()


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=9, max_size=9))
def test_point_to_segment_matches_dense_sampling(vals):
    p = np.array(vals[0:3])
    a = np.array(vals[3:6])
    b = np.array(vals[6:9])
    d, s = point_to_segment(p, a, b)
    assert 0.0 <= s <= 1.0
    ref = dense_segment_distance(p, a, b)
    assert abs(d - ref) < 1e-3
    closest = a + s * (b - a)
    assert abs(np.linalg.norm(p - closest) - d) < 1e-9


def test_point_to_segment_degenerate_segment():
    p = np.array([1.0, 2.0, 2.0])
    a = np.array([1.0, 0.0, 0.0])
    d, s = point_to_segment(p, a, a.copy())
    assert d == pytest.approx(math.sqrt(8.0))
    assert s == 0.0


def test_point_to_polyline_picks_nearest_of_all_segments():
    wps = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [10.0, 10.0, 0.0]])
    d = point_to_polyline(np.array([10.5, 5.0, 0.0]), wps)
    assert d == pytest.approx(0.5)
    d = point_to_polyline(np.array([5.0, -2.0, 0.0]), wps)
    assert d == pytest.approx(2.0)


def test_arclength_and_point_at_arc_are_consistent():
    wps = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [3.0, 4.0, 0.0]])
    cum = polyline_arclength(wps)
    assert np.allclose(cum, [0.0, 3.0, 7.0])
    assert np.allclose(point_at_arc(wps, cum, 0.0), wps[0])
    assert np.allclose(point_at_arc(wps, cum, 3.0), wps[1])
    assert np.allclose(point_at_arc(wps, cum, 5.0), [3.0, 2.0, 0.0])
    # Clamps at both ends rather than extrapolating.
    assert np.allclose(point_at_arc(wps, cum, 99.0), wps[-1])
    assert np.allclose(point_at_arc(wps, cum, -1.0), wps[0])


def test_project_to_polyline_prefers_earliest_arc_on_ties():
    # A symmetric V: the apex point is equidistant from both legs' interiors,
    # but the projection of a point on the axis of symmetry must take the
    # earlier arc length.
    wps = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
    cum = polyline_arclength(wps)
    s, d = project_to_polyline(np.array([1.0, 0.0, 0.0]), wps, cum)
    assert s == pytest.approx(cum[1] * 0.5)
    assert d == pytest.approx(math.sqrt(0.5))


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3))
def test_projection_distance_agrees_with_point_to_polyline(vals):
    wps = np.array([[0.0, 0.0, 0.0], [4.0, 0.0, 1.0], [4.0, 5.0, 1.0], [0.0, 5.0, 2.0]])
    cum = polyline_arclength(wps)
    p = np.array(vals)
    s, d = project_to_polyline(p, wps, cum)
    assert d == pytest.approx(point_to_polyline(p, wps), abs=1e-9)
    assert 0.0 <= s <= cum[-1]
    assert np.linalg.norm(point_at_arc(wps, cum, s) - p) == pytest.approx(d, abs=1e-6)


def test_segment_frame_is_orthonormal_and_tangent_first():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([2.0, 1.0, -1.0])
    R = segment_frame(a, b)
    assert R.shape == (3, 3)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(R[0], (b - a) / np.linalg.norm(b - a))
    # Second axis is horizontal when the segment is not vertical.
    assert abs(R[1, 2]) < 1e-12
    with pytest.raises(ValueError):
        segment_frame(a, a.copy())


def test_segment_frame_handles_vertical_segments():
    R = segment_frame(np.zeros(3), np.array([0.0, 0.0, 3.0]))
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(R[0], [0.0, 0.0, 1.0])


def test_rotation_about_y_rotates_x_toward_minus_z():
    R = rotation_about_y(math.pi / 2)
    assert np.allclose(R @ np.array([1.0, 0.0, 0.0]), [0.0, 0.0, -1.0], atol=1e-12)
    assert np.allclose(R @ np.array([0.0, 1.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_capsule_distance_signed_values():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 2.0])
    r = 0.25
    assert capsule_distance(np.array([1.0, 0.0, 1.0]), a, b, r) == pytest.approx(0.75)
    assert capsule_distance(np.array([0.1, 0.0, 1.0]), a, b, r) == pytest.approx(-0.15)
    # Beyond the cap the distance is to the end sphere.
    assert capsule_distance(np.array([0.0, 0.0, 3.0]), a, b, r) == pytest.approx(0.75)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(min_value=-3.0, max_value=3.0, allow_nan=False), min_size=3, max_size=3),
    st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=3, max_size=3),
    st.floats(min_value=0.05, max_value=0.4),
)
def test_ray_capsule_matches_marching_oracle(origin, direction, radius):
    d = np.array(direction)
    norm = np.linalg.norm(d)
    if norm < 1e-3:
        return
    d = d / norm
    o = np.array(origin)
    a = np.array([0.5, 0.2, -1.0])
    b = np.array([0.3, -0.1, 2.0])
    t = ray_capsule(o, d, a, b, radius)
    ref = ray_march_capsule(o, d, a, b, radius, max_range=20.0)
    if math.isinf(ref):
        # Marching can only miss if the analytic hit is beyond its horizon.
        assert math.isinf(t) or t > 19.0
    else:
        assert t == pytest.approx(ref, abs=1e-4)


def test_ray_capsule_inside_starts_at_zero():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([0.0, 0.0, 2.0])
    t = ray_capsule(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), a, b, 0.3)
    assert t == pytest.approx(0.0, abs=1e-12)


def test_ray_capsule_miss_returns_inf():
    a = np.array([5.0, 0.0, 0.0])
    b = np.array([5.0, 0.0, 2.0])
    t = ray_capsule(np.zeros(3), np.array([0.0, 1.0, 0.0]), a, b, 0.2)
    assert math.isinf(t)
