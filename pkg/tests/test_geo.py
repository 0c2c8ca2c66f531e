import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vulnmap.errors import DegeneratePolygon, DuplicateId, EmptyInput, KTooLarge
from vulnmap.geo import (GeoPoint, PolygonGeom, build_index, equirect_distance,
                         haversine_distance, knn_query, point_in_polygon,
                         sample_points_in_polygon)

from conftest import random_points

ONE_DEGREE_M = 111_194.92664455874  # pi / 180 * 6_371_000


def test_geopoint_bounds():
    with pytest.raises(ValueError):
        GeoPoint(91.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, -180.5)
    with pytest.raises(ValueError):
        GeoPoint(float("nan"), 0.0)


@pytest.mark.parametrize("dist", [haversine_distance, equirect_distance])
def test_identity_and_one_degree(dist):
    p = GeoPoint(-34.6, -58.4)
    assert dist(p, p) == 0.0
    assert dist(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(ONE_DEGREE_M, abs=0.1)


def test_haversine_buenos_aires_pair():
    # spherical law of cosines at 40 digits gives 9152.858437 m
    d = haversine_distance(GeoPoint(-34.6, -58.4), GeoPoint(-34.6, -58.3))
    assert d == pytest.approx(9152.858437, abs=1e-3)
    assert abs(d - 9154) < 5


def test_equirect_within_one_percent_of_haversine():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        a = random_points(rng, 1)[0]
        b = GeoPoint(a.lat + rng.uniform(-0.35, 0.35), a.lon + rng.uniform(-0.35, 0.35))
        h = haversine_distance(a, b)
        if h == 0 or h >= 50_000:
            continue
        assert abs(equirect_distance(a, b) - h) / h < 0.01
        checked += 1


def test_haversine_symmetry_and_triangle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b, c = random_points(rng, 3, lat=(-80, 80), lon=(-179, 179))
        assert haversine_distance(a, b) == haversine_distance(b, a)
        assert haversine_distance(a, c) <= haversine_distance(a, b) + haversine_distance(b, c) + 1e-6


lat_st = st.floats(-89, 89)
lon_st = st.floats(-179, 179)


@given(lat_st, lon_st, lat_st, lon_st)
def test_haversine_nonnegative_symmetric(a, b, c, d):
    p, q = GeoPoint(a, b), GeoPoint(c, d)
    assert haversine_distance(p, q) >= 0
    assert haversine_distance(p, q) == haversine_distance(q, p)


UNIT_SQUARE = [(0, 0), (0, 1), (1, 1), (1, 0)]


def test_polygon_closing_and_degenerate():
    poly = PolygonGeom(UNIT_SQUARE)
    assert poly.exterior[0] == poly.exterior[-1]
    with pytest.raises(DegeneratePolygon):
        PolygonGeom([(0, 0), (1, 1), (2, 2)])


def test_point_in_polygon_boundary_is_outside():
    poly = PolygonGeom(UNIT_SQUARE)
    assert point_in_polygon(0.5, 0.5, poly)
    assert not point_in_polygon(0.0, 0.5, poly)
    assert not point_in_polygon(1.0, 1.0, poly)
    assert not point_in_polygon(1.5, 0.5, poly)


def test_point_in_polygon_hole():
    poly = PolygonGeom([(0, 0), (0, 4), (4, 4), (4, 0)], holes=[[(1, 1), (1, 3), (3, 3), (3, 1)]])
    assert point_in_polygon(0.5, 0.5, poly)
    assert not point_in_polygon(2, 2, poly)


def test_sample_unit_square():
    poly = PolygonGeom(UNIT_SQUARE)
    pts = sample_points_in_polygon(poly, 5, seed=3)
    assert len(pts) == 5
    assert all(poly.contains(p.lat, p.lon) for p in pts)
    assert pts == sample_points_in_polygon(poly, 5, seed=3)
    assert pts != sample_points_in_polygon(poly, 5, seed=4)


def test_sample_degenerate():
    with pytest.raises(DegeneratePolygon):
        sample_points_in_polygon(PolygonGeom([(0, 0), (0, 1), (0, 2)]), 5, seed=0)


def test_sample_thin_polygon_hits_rejection_limit():
    # two specks at opposite corners of a continent-sized bounding box
    specks = [PolygonGeom([(0, 0), (0, 1e-7), (1e-7, 1e-7)]),
              PolygonGeom([(60, 60), (60, 60 + 1e-7), (60 + 1e-7, 60 + 1e-7)])]
    with pytest.raises(DegeneratePolygon):
        sample_points_in_polygon(specks, 1, seed=0)


def test_sample_rotation_invariant():
    ring = [(-27.0, -59.0), (-27.1, -58.95), (-27.05, -58.8), (-26.95, -58.85), (-26.9, -58.97)]
    base = sample_points_in_polygon(PolygonGeom(ring), 7, seed=11)
    for r in range(1, len(ring)):
        rotated = ring[r:] + ring[:r]
        assert sample_points_in_polygon(PolygonGeom(rotated), 7, seed=11) == base


def test_sample_multipolygon_parts():
    a = PolygonGeom([(0, 0), (0, 1), (1, 1), (1, 0)])
    b = PolygonGeom([(0, 5), (0, 6), (1, 6), (1, 5)])
    pts = sample_points_in_polygon([a, b], 40, seed=2)
    assert all(a.contains(p.lat, p.lon) or b.contains(p.lat, p.lon) for p in pts)
    assert any(a.contains(p.lat, p.lon) for p in pts) and any(b.contains(p.lat, p.lon) for p in pts)


def test_build_index_errors_and_size():
    with pytest.raises(EmptyInput):
        build_index([])
    with pytest.raises(DuplicateId):
        build_index([(1, GeoPoint(0, 0)), (1, GeoPoint(1, 1))])
    idx = build_index([("a", GeoPoint(-30, -60))])
    assert len(idx) == 1
    assert knn_query(idx, GeoPoint(-31, -61), 1)[0][0] == "a"
    with pytest.raises(KTooLarge):
        knn_query(idx, GeoPoint(0, 0), 2)


def test_index_ten_thousand_points():
    rng = np.random.default_rng(5)
    pts = random_points(rng, 10_000)
    idx = build_index(list(enumerate(pts)))
    assert len(idx) == 10_000
    for i in rng.integers(0, 10_000, 50):
        assert knn_query(idx, pts[i], 1) == [(int(i), 0.0)]


def brute_knn(points, q, k):
    d = sorted(((haversine_distance(q, p), i) for i, p in points), key=lambda t: (t[0], t[1]))
    return [(i, dist) for dist, i in d[:k]]


def test_knn_matches_brute_force_in_argentina():
    rng = np.random.default_rng(9)
    pts = list(enumerate(random_points(rng, 1000)))
    idx = build_index(pts)
    for q in random_points(rng, 200):
        got = knn_query(idx, q, 3)
        want = brute_knn(pts, q, 3)
        assert [i for i, _ in got] == [i for i, _ in want]
        assert [d for _, d in got] == pytest.approx([d for _, d in want], abs=1e-6)


def test_knn_sorted_ascending():
    rng = np.random.default_rng(4)
    idx = build_index(list(enumerate(random_points(rng, 300))))
    res = knn_query(idx, GeoPoint(-35, -60), 10)
    dists = [d for _, d in res]
    assert dists == sorted(dists)


def test_knn_high_latitude_still_exact():
    rng = np.random.default_rng(8)
    pts = list(enumerate(random_points(rng, 500, lat=(-60, -40), lon=(-75, -50))))
    idx = build_index(pts)
    for q in random_points(rng, 50, lat=(-60, -40), lon=(-75, -50)):
        assert [i for i, _ in knn_query(idx, q, 5)] == [i for i, _ in brute_knn(pts, q, 5)]
