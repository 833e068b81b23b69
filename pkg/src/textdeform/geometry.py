"""Polygon and grid primitives shared by all other modules.

Conventions used throughout the package:

* Coordinates are continuous ``(x, y)`` pixel positions; pixel centers sit
  at integer coordinates, so an ``H x W`` map spans ``[0, W-1] x [0, H-1]``.
* A polygon is counter-clockwise when its shoelace signed area is positive.
  ``Polygon`` normalizes orientation on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePolygonError

# Polygons with |signed area| below this are rejected as degenerate.
AREA_EPS = 1e-9


def signed_area(points: np.ndarray) -> float:
    """Shoelace signed area; positive for counter-clockwise order."""
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def perimeter(points: np.ndarray) -> float:
    """Total boundary length of the closed polygon through ``points``."""
    pts = np.asarray(points, dtype=float)
    return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())


@dataclass(frozen=True)
class Polygon:
    """Closed polygon, stored counter-clockwise.

    Construction copies the points, flips clockwise input, and rejects
    degenerate input (fewer than 3 points or zero area).
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise DegeneratePolygonError(
                f"polygon needs an (K>=3, 2) point array, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise DegeneratePolygonError("polygon has non-finite coordinates")
        area = signed_area(pts)
        if abs(area) <= AREA_EPS:
            raise DegeneratePolygonError(f"polygon area {area} is (near) zero")
        if area < 0:
            pts = pts[::-1]
        object.__setattr__(self, "points", np.ascontiguousarray(pts))

    @property
    def area(self) -> float:
        return signed_area(self.points)

    @property
    def perimeter(self) -> float:
        return perimeter(self.points)

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the vertex set."""
        pts = self.points
        return (
            float(pts[:, 0].min()),
            float(pts[:, 1].min()),
            float(pts[:, 0].max()),
            float(pts[:, 1].max()),
        )


@dataclass(frozen=True)
class ControlPolygon:
    """Closed contour re-expressed as exactly ``n`` control points.

    Unlike ``Polygon`` the point order is preserved verbatim: deformation
    moves points individually and may transiently produce self-intersecting
    or clockwise configurations.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise DegeneratePolygonError(
                f"control polygon needs an (N>=3, 2) array, got shape {pts.shape}"
            )
        object.__setattr__(self, "points", np.ascontiguousarray(pts))

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class GridMap:
    """Dense H x W x C float map with finite values."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.ndim != 3:
            raise ValueError(f"grid map must be HxWxC, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid map contains non-finite values")
        object.__setattr__(self, "values", np.ascontiguousarray(vals))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def normalize_orientation(poly) -> Polygon:
    """Return ``poly`` with counter-clockwise point order.

    Accepts a ``Polygon`` or a raw (K, 2) point array. Raises
    ``DegeneratePolygonError`` for zero-area input (e.g. collinear points).
    """
    if isinstance(poly, Polygon):
        return poly
    return Polygon(np.asarray(poly, dtype=float))


def _anchor_index(points: np.ndarray) -> int:
    """Index of the vertex with lexicographically smallest (y, x)."""
    order = np.lexsort((points[:, 0], points[:, 1]))
    return int(order[0])


def resample_uniform(poly, n: int) -> ControlPolygon:
    """Resample the polygon boundary to ``n`` equally spaced points.

    Spacing is ``perimeter / n`` of arc length along the input boundary.
    The first output point is the input vertex with lexicographically
    smallest (y, x); counter-clockwise order is preserved.
    """
    if n < 3:
        raise ValueError(f"need n >= 3 control points, got {n}")
    poly = normalize_orientation(poly)
    pts = np.roll(poly.points, -_anchor_index(poly.points), axis=0)
    edges = np.roll(pts, -1, axis=0) - pts
    seg_len = np.linalg.norm(edges, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    targets = np.arange(n) * (total / n)
    # For each target arc length, locate its edge and interpolate.
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(pts) - 1)
    local = targets - cum[idx]
    with np.errstate(invalid="ignore"):
        t = np.where(seg_len[idx] > 0, local / seg_len[idx], 0.0)
    out = pts[idx] + edges[idx] * t[:, None]
    return ControlPolygon(out)


def bilinear_sample(grid: GridMap, x, y) -> np.ndarray:
    """Bilinear blend of the 4 grid cells around continuous (x, y).

    ``x`` and ``y`` are scalars or equal-length arrays; the result is
    (M, C). Base indices clamp to the last interior cell, so coordinates
    outside the grid extrapolate linearly. Exact lattice coordinates
    reproduce stored values.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"coordinate shapes differ: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite sample coordinate")
    vals = grid.values
    h, w = grid.height, grid.width
    x0 = np.clip(np.floor(x), 0, max(w - 2, 0)).astype(int)
    y0 = np.clip(np.floor(y), 0, max(h - 2, 0)).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (x - x0)[:, None]
    ty = (y - y0)[:, None]
    top = vals[y0, x0] * (1 - tx) + vals[y0, x1] * tx
    bot = vals[y1, x0] * (1 - tx) + vals[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def points_in_polygon(points: np.ndarray, poly_points: np.ndarray) -> np.ndarray:
    """Even-odd containment test, vectorized over ``points`` (M, 2).

    Points exactly on the boundary are classified inconsistently by the
    even-odd rule; callers that care (field generation) combine this with a
    boundary-distance test.
    """
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly_points, dtype=float)
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    x0s, y0s = poly[:, 0], poly[:, 1]
    x1s, y1s = np.roll(x0s, -1), np.roll(y0s, -1)
    for x0, y0, x1, y1 in zip(x0s, y0s, x1s, y1s):
        if y0 == y1:
            continue
        crosses = (y0 > y) != (y1 > y)
        xs = x0 + (x1 - x0) * (y - y0) / (y1 - y0)
        inside ^= crosses & (x < xs)
    return inside


def nearest_boundary_points(
    points: np.ndarray, poly_points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest point on the closed polygon polyline for each query point.

    Returns ``(dist, nearest)`` with shapes (M,) and (M, 2). Distances are
    exact point-to-segment distances (continuous boundary, not rasterized).
    """
    p = np.asarray(points, dtype=float)
    a = np.asarray(poly_points, dtype=float)
    b = np.roll(a, -1, axis=0)
    ab = b - a
    denom = np.einsum("kc,kc->k", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    # (M, K) projection parameter of each point onto each segment
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mkc,kc->mk", ap, ab) / denom[None, :], 0.0, 1.0)
    foot = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d2 = np.sum((p[:, None, :] - foot) ** 2, axis=2)
    k = np.argmin(d2, axis=1)
    m = np.arange(len(p))
    return np.sqrt(d2[m, k]), foot[m, k]


def polygon_iou(a, b, supersample: int = 4) -> float:
    """Intersection over union of two polygons via rasterization.

    Both polygons are rasterized onto a shared grid supersampled
    ``supersample`` times per pixel over the tight bounding box of their
    union, which tolerates self-touching synthetic polygons that exact
    clipping would choke on.
    """
    a = normalize_orientation(a)
    b = normalize_orientation(b)
    ax0, ay0, ax1, ay1 = a.bounds()
    bx0, by0, bx1, by1 = b.bounds()
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    x1, y1 = max(ax1, bx1), max(ay1, by1)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    step = 1.0 / supersample
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    in_a = points_in_polygon(pts, a.points)
    in_b = points_in_polygon(pts, b.points)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(in_a & in_b) / union)
