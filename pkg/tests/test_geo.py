import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from farecourt.geo import (
    GeoPoint,
    Polyline,
    densify,
    distance_to_polyline,
    heading_change,
    planar_distance,
    polyline_length,
    rotate_vector,
    truncate_polyline,
)

coord = st.floats(-1e4, 1e4, allow_nan=False)
angle = st.floats(-720, 720, allow_nan=False)


@pytest.mark.parametrize(
    "v, theta, expected",
    [((1, 0), 90, (0, 1)), ((1, 0), 180, (-1, 0)), ((3, 4), 90, (-4, 3))],
)
def test_rotate_vector_examples(v, theta, expected):
    assert np.allclose(rotate_vector(v, theta), expected, atol=1e-12)


@pytest.mark.parametrize(
    "a, b, d",
    [((0, 0), (0, 0), 0.0), ((0, 0), (3, 4), 5.0), ((1, 1), (4, 5), 5.0)],
)
def test_planar_distance_examples(a, b, d):
    assert planar_distance(GeoPoint(*a), GeoPoint(*b)) == pytest.approx(d)


def test_truncate_interpolates_on_cut_segment():
    assert truncate_polyline(Polyline([(0, 0), (10, 0)]), 4) == Polyline([(0, 0), (4, 0)])


def test_truncate_longer_than_line_is_identity():
    p = Polyline([(0, 0), (10, 0)])
    assert truncate_polyline(p, 100) == p


def test_truncate_walks_arc_length():
    out = truncate_polyline(Polyline([(0, 0), (3, 0), (3, 4)]), 5)
    assert np.allclose(out.points, [(0, 0), (3, 0), (3, 2)])


@pytest.mark.parametrize("delta", [0, -1.0])
def test_truncate_rejects_non_positive_delta(delta):
    with pytest.raises(ValueError):
        truncate_polyline(Polyline([(0, 0), (1, 0)]), delta)


@pytest.mark.parametrize(
    "pts, length",
    [
        ([(0, 0), (1, 0)], 1.0),
        ([(0, 0), (3, 0), (3, 4)], 7.0),
        ([(0, 0), (2, 0), (2, 2), (0, 2), (0, 0)], 8.0),
    ],
)
def test_polyline_length_examples(pts, length):
    assert polyline_length(Polyline(pts)) == pytest.approx(length)


def test_polyline_rejects_consecutive_duplicates():
    with pytest.raises(ValueError):
        Polyline([(0, 0), (0, 0), (1, 0)])


def test_from_points_drops_duplicates():
    assert len(Polyline.from_points([(0, 0), (0, 0), (1, 0)])) == 2


def test_geopoint_validate_rejects_out_of_range():
    with pytest.raises(ValueError):
        GeoPoint(2e7, 0).validate()
    with pytest.raises(ValueError):
        GeoPoint(math.nan, 0).validate()


def test_densify_respects_spacing_and_keeps_vertices():
    p = Polyline([(0, 0), (35, 0), (35, 20)])
    d = densify(p, 10)
    gaps = np.hypot(*np.diff(d.points, axis=0).T)
    assert gaps.max() <= 10 + 1e-9
    assert polyline_length(d) == pytest.approx(polyline_length(p))
    for v in p.points:
        assert np.any(np.all(np.isclose(d.points, v), axis=1))


def test_heading_change_sign_convention():
    assert heading_change((1, 0), (0, 1)) == pytest.approx(90)
    assert heading_change((1, 0), (0, -1)) == pytest.approx(-90)
    assert heading_change((1, 0), (1, 0)) == pytest.approx(0)


def test_distance_to_polyline_projects_onto_segments():
    line = Polyline([(0, 0), (10, 0)])
    d = distance_to_polyline(np.array([[5, 3], [-4, 3], [10, 0]]), line)
    assert np.allclose(d, [3, 5, 0])


@given(st.tuples(coord, coord), angle, angle)
def test_rotation_composes_and_preserves_norm(v, a, b):
    v = np.array(v)
    once = rotate_vector(rotate_vector(v, b), a)
    assert np.allclose(once, rotate_vector(v, a + b), atol=1e-6)
    assert np.linalg.norm(rotate_vector(v, a)) == pytest.approx(np.linalg.norm(v), rel=1e-9, abs=1e-9)


@given(st.tuples(coord, coord), st.tuples(coord, coord), st.tuples(coord, coord))
def test_triangle_inequality(a, b, c):
    assert planar_distance(a, c) <= planar_distance(a, b) + planar_distance(b, c) + 1e-6


@st.composite
def polylines(draw, min_size=2, max_size=12):
    pts = draw(st.lists(st.tuples(coord, coord), min_size=min_size, max_size=max_size))
    p = Polyline.from_points(pts)
    if len(p) < 2:
        p = Polyline([pts[0], (pts[0][0] + 1.0, pts[0][1])])
    return p


@given(polylines(), st.floats(1e-3, 5e4))
def test_truncation_length_is_exact(p, delta):
    out = truncate_polyline(p, delta)
    assert abs(polyline_length(out) - min(delta, polyline_length(p))) <= 1e-6
    k = len(out) - 1
    assert np.array_equal(out.points[:k], p.points[:k])
