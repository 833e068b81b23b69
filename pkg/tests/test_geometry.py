"""Geometry primitives against analytic values and independent oracles."""

import numpy as np
import pytest
from shapely.geometry import Point
from shapely.geometry import Polygon as ShapelyPolygon

from textdeform.errors import DegeneratePolygonError
from textdeform.geometry import (
    ControlPolygon,
    GridMap,
    Polygon,
    bilinear_sample,
    nearest_boundary_points,
    normalize_orientation,
    points_in_polygon,
    polygon_iou,
    resample_uniform,
    signed_area,
)

SQUARE = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])


def _random_simple_polygon(rng, n_max=10, radius=20.0):
    """Star-shaped polygon around a random center: always simple."""
    n = rng.integers(4, n_max + 1)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.3 * radius, radius, n)
    center = rng.uniform(25, 40, 2)
    return center + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


class TestSignedArea:
    def test_ccw_square_positive(self):
        assert signed_area(SQUARE) == pytest.approx(16.0, abs=1e-12)

    def test_cw_square_negative(self):
        assert signed_area(SQUARE[::-1]) == pytest.approx(-16.0, abs=1e-12)

    def test_triangle(self):
        tri = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
        assert signed_area(tri) == pytest.approx(2.0, abs=1e-12)


class TestPolygon:
    def test_normalizes_to_ccw(self):
        poly = Polygon(SQUARE[::-1])
        assert signed_area(poly.points) > 0

    def test_preserves_ccw_order(self):
        poly = Polygon(SQUARE)
        np.testing.assert_array_equal(poly.points, SQUARE)

    def test_area_perimeter(self):
        poly = Polygon(SQUARE)
        assert poly.area == pytest.approx(16.0)
        assert poly.perimeter == pytest.approx(16.0)

    def test_too_few_points_raises(self):
        with pytest.raises(DegeneratePolygonError):
            Polygon(np.array([[0.0, 0.0], [1.0, 1.0]]))

    def test_zero_area_raises(self):
        with pytest.raises(DegeneratePolygonError):
            Polygon(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))

    def test_non_finite_raises(self):
        bad = SQUARE.copy()
        bad[0, 0] = np.nan
        with pytest.raises(DegeneratePolygonError):
            Polygon(bad)

    def test_normalize_orientation_accepts_arrays(self):
        poly = normalize_orientation(SQUARE[::-1])
        assert signed_area(poly.points) > 0


class TestResampleUniform:
    def test_square_corners_recovered(self):
        ring = resample_uniform(Polygon(SQUARE), 4)
        assert isinstance(ring, ControlPolygon)
        np.testing.assert_allclose(ring.points, SQUARE, atol=1e-12)

    def test_uniform_spacing(self):
        ring = resample_uniform(Polygon(SQUARE), 16).points
        gaps = np.linalg.norm(np.roll(ring, -1, axis=0) - ring, axis=1)
        np.testing.assert_allclose(gaps, 1.0, atol=1e-9)

    def test_anchor_is_lexicographic_min(self):
        # anchor = vertex with smallest (y, x)
        ring = resample_uniform(Polygon(SQUARE), 8).points
        np.testing.assert_allclose(ring[0], [0.0, 0.0], atol=1e-12)

    def test_invariant_under_vertex_roll(self):
        rolled = np.roll(SQUARE, 2, axis=0)
        a = resample_uniform(Polygon(SQUARE), 12).points
        b = resample_uniform(Polygon(rolled), 12).points
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_points_lie_on_boundary(self):
        rng = np.random.default_rng(11)
        pts = _random_simple_polygon(rng)
        ring = resample_uniform(Polygon(pts), 32).points
        shp = ShapelyPolygon(pts)
        for p in ring:
            assert shp.exterior.distance(Point(p)) < 1e-9

    def test_n_below_three_raises(self):
        with pytest.raises(ValueError):
            resample_uniform(Polygon(SQUARE), 2)


class TestBilinearSample:
    def test_exact_on_lattice(self):
        rng = np.random.default_rng(0)
        grid = GridMap(rng.uniform(size=(6, 7, 3)))
        for y in range(6):
            for x in range(7):
                val = bilinear_sample(grid, np.array([float(x)]), np.array([float(y)]))
                np.testing.assert_allclose(val[0], grid.values[y, x], atol=1e-12)

    def test_reproduces_affine_function(self):
        ys, xs = np.mgrid[0:8, 0:9].astype(float)
        grid = GridMap(2.0 * xs + 3.0 * ys + 1.0)
        rng = np.random.default_rng(1)
        qx = rng.uniform(0, 8, 50)
        qy = rng.uniform(0, 7, 50)
        vals = bilinear_sample(grid, qx, qy)[:, 0]
        np.testing.assert_allclose(vals, 2.0 * qx + 3.0 * qy + 1.0, atol=1e-9)

    def test_extrapolates_linearly_outside(self):
        ys, xs = np.mgrid[0:4, 0:4].astype(float)
        grid = GridMap(xs)
        val = bilinear_sample(grid, np.array([5.5]), np.array([1.0]))
        assert val[0, 0] == pytest.approx(5.5)

    def test_nan_coordinates_raise(self):
        grid = GridMap(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            bilinear_sample(grid, np.array([np.nan]), np.array([0.0]))


class TestPointsInPolygon:
    def test_square_interior_exterior(self):
        pts = np.array([[2.0, 2.0], [5.0, 2.0], [-1.0, 0.5]])
        inside = points_in_polygon(pts, SQUARE)
        assert inside.tolist() == [True, False, False]

    def test_matches_shapely_on_random_polygons(self):
        # shapely is the independent oracle; skip points within 1e-6 of the
        # boundary where on-edge conventions may differ
        rng = np.random.default_rng(7)
        for _ in range(20):
            poly = _random_simple_polygon(rng)
            shp = ShapelyPolygon(poly)
            pts = rng.uniform(0, 64, size=(300, 2))
            near_edge = np.array(
                [shp.exterior.distance(Point(p)) < 1e-6 for p in pts]
            )
            ours = points_in_polygon(pts, poly)
            theirs = np.array([shp.contains(Point(p)) for p in pts])
            np.testing.assert_array_equal(ours[~near_edge], theirs[~near_edge])

    def test_concave_polygon(self):
        concave = np.array(
            [[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [3.0, 2.0], [0.0, 6.0]]
        )
        pts = np.array([[3.0, 1.0], [3.0, 4.0], [1.0, 4.0]])
        inside = points_in_polygon(pts, concave)
        assert inside.tolist() == [True, False, True]


class TestNearestBoundaryPoints:
    def test_square_center(self):
        d, b = nearest_boundary_points(np.array([[2.0, 2.0]]), SQUARE)
        assert d[0] == pytest.approx(2.0)
        # any edge midpoint is valid; the returned foot must be at distance d
        assert np.linalg.norm(b[0] - [2.0, 2.0]) == pytest.approx(2.0)

    def test_outside_point_nearest_corner(self):
        d, b = nearest_boundary_points(np.array([[-3.0, -4.0]]), SQUARE)
        assert d[0] == pytest.approx(5.0)
        np.testing.assert_allclose(b[0], [0.0, 0.0], atol=1e-12)

    def test_matches_shapely_distance(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            poly = _random_simple_polygon(rng)
            shp = ShapelyPolygon(poly)
            pts = rng.uniform(0, 64, size=(100, 2))
            d, _ = nearest_boundary_points(pts, poly)
            ref = np.array([shp.exterior.distance(Point(p)) for p in pts])
            np.testing.assert_allclose(d, ref, atol=1e-9)


class TestPolygonIoU:
    def test_identical_is_one(self):
        assert polygon_iou(SQUARE, SQUARE) == pytest.approx(1.0, abs=1e-6)

    def test_disjoint_is_zero(self):
        other = SQUARE + 10.0
        assert polygon_iou(SQUARE, other) == 0.0

    def test_half_overlap(self):
        # [0,4]x[0,4] vs [2,6]x[0,4]: inter 8, union 24
        other = SQUARE + np.array([2.0, 0.0])
        iou = polygon_iou(SQUARE, other, supersample=8)
        assert iou == pytest.approx(8.0 / 24.0, abs=0.02)

    def test_matches_shapely_on_random_pairs(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 10:
            a = _random_simple_polygon(rng)
            b = _random_simple_polygon(rng)
            sa, sb = ShapelyPolygon(a).buffer(0), ShapelyPolygon(b).buffer(0)
            if sa.geom_type != "Polygon" or sb.geom_type != "Polygon":
                continue
            inter = sa.intersection(sb).area
            union = sa.union(sb).area
            ref = inter / union if union > 0 else 0.0
            ours = polygon_iou(a, b, supersample=4)
            assert ours == pytest.approx(ref, abs=0.03)
            checked += 1
