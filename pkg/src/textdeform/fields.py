"""Ground-truth field generation from polygon annotations.

For every pixel of an annotated image this produces:

* ``cls``  -- 1 inside any text instance, else 0
* ``dist`` -- distance to the nearest boundary point, normalized per
  instance so its interior maximum is exactly 1; 0 outside text
* ``dir``  -- unit vector from the nearest boundary point toward the pixel
  (pointing into the instance); (0, 0) outside text and on the boundary
* ``segment_size`` -- pixel count of the segment containing the pixel,
  with all background pixels forming one segment

The nearest boundary point is computed against the continuous polygon
polyline (point-to-segment), not rasterized boundary pixels. A dense
boundary-sampling oracle is included for validating the analytic path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import GridMap, Polygon, nearest_boundary_points, points_in_polygon

log = logging.getLogger(__name__)

# Raw distances below this count as "on the boundary": dist 0, dir (0, 0).
BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class TextInstance:
    """One annotated text region; ``ignore`` exempts it from evaluation."""

    boundary: Polygon
    id: int = 0
    ignore: bool = False

    def __post_init__(self):
        if not isinstance(self.boundary, Polygon):
            object.__setattr__(self, "boundary", Polygon(np.asarray(self.boundary)))


@dataclass(frozen=True)
class AnnotatedSample:
    """Image grid plus its counter-clockwise text polygons."""

    image: GridMap
    instances: list[TextInstance] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.image, GridMap):
            object.__setattr__(self, "image", GridMap(self.image))
        h, w = self.image.height, self.image.width
        for inst in self.instances:
            x0, y0, x1, y1 = inst.boundary.bounds()
            if x0 < -1e-6 or y0 < -1e-6 or x1 > w - 1 + 1e-6 or y1 > h - 1 + 1e-6:
                raise ValueError(
                    f"instance {inst.id} bounds ({x0:.2f},{y0:.2f},{x1:.2f},{y1:.2f}) "
                    f"exceed image domain [0,{w - 1}]x[0,{h - 1}]"
                )


@dataclass
class GroundTruthBundle:
    """Per-pixel training targets; arrays are (H, W) / (H, W, 2).

    ``instance_id`` maps each pixel to the index of the instance that owns
    it (-1 for background). It is a training-time convenience, not part of
    the serialized 5-channel format, so bundles loaded from disk carry
    None.
    """

    cls: np.ndarray
    dist: np.ndarray
    dir: np.ndarray
    segment_size: np.ndarray
    instance_id: np.ndarray | None = None

    def to_array(self) -> np.ndarray:
        """Stack to (H, W, 5) in channel order cls, dist, dir_x, dir_y, segment_size."""
        return np.dstack([self.cls, self.dist, self.dir[..., 0], self.dir[..., 1], self.segment_size])

    @property
    def channel_names(self) -> list[str]:
        return ["cls", "dist", "dir_x", "dir_y", "segment_size"]


def _pixel_grid(h: int, w: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    return np.column_stack([xs.ravel(), ys.ravel()])


def compute_ground_truth(sample: AnnotatedSample) -> GroundTruthBundle:
    """Generate classification, distance, direction, and segment-size maps.

    Pixels covered by several instances are assigned to the instance whose
    boundary is nearest. Instances without an interior pixel are dropped
    with a warning.
    """
    h, w = sample.image.height, sample.image.width
    n_px = h * w
    assigned = np.full(n_px, -1, dtype=int)
    raw_dist = np.full(n_px, np.inf)
    nearest = np.zeros((n_px, 2))
    pixels = _pixel_grid(h, w)

    for k, inst in enumerate(sample.instances):
        pts = inst.boundary.points
        x0, y0, x1, y1 = inst.boundary.bounds()
        # Candidate pixels: bounding box only, to keep per-instance work small.
        xi0, xi1 = max(int(np.floor(x0)), 0), min(int(np.ceil(x1)), w - 1)
        yi0, yi1 = max(int(np.floor(y0)), 0), min(int(np.ceil(y1)), h - 1)
        if xi1 < xi0 or yi1 < yi0:
            continue
        gx, gy = np.meshgrid(np.arange(xi0, xi1 + 1), np.arange(yi0, yi1 + 1))
        flat = (gy * w + gx).ravel()
        cand = pixels[flat]
        d, b = nearest_boundary_points(cand, pts)
        inside = points_in_polygon(cand, pts) | (d < BOUNDARY_EPS)
        take = inside & (d < raw_dist[flat])
        sel = flat[take]
        assigned[sel] = k
        raw_dist[sel] = d[take]
        nearest[sel] = b[take]

    cls = (assigned >= 0).astype(float)
    dist = np.zeros(n_px)
    direction = np.zeros((n_px, 2))
    seg_size = np.zeros(n_px)

    for k, inst in enumerate(sample.instances):
        mine = assigned == k
        if not np.any(mine):
            log.warning("instance %s has no pixels; dropped from ground truth", inst.id)
            continue
        scale = raw_dist[mine].max()
        if scale <= BOUNDARY_EPS:
            log.warning("instance %s has no interior pixel; dropped from ground truth", inst.id)
            assigned[mine] = -1
            cls[mine] = 0.0
            continue
        dist[mine] = raw_dist[mine] / scale
        interior = mine & (raw_dist > BOUNDARY_EPS)
        vec = pixels[interior] - nearest[interior]
        direction[interior] = vec / np.linalg.norm(vec, axis=1, keepdims=True)
        seg_size[mine] = np.count_nonzero(mine)

    seg_size[assigned < 0] = np.count_nonzero(assigned < 0)

    return GroundTruthBundle(
        cls=cls.reshape(h, w),
        dist=dist.reshape(h, w),
        dir=direction.reshape(h, w, 2),
        segment_size=seg_size.reshape(h, w),
        instance_id=assigned.reshape(h, w),
    )


def dense_boundary_samples(poly: Polygon, step: float = 1e-3) -> np.ndarray:
    """Points along the polygon boundary spaced at most ``step`` apart."""
    pts = poly.points
    out = []
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        length = float(np.linalg.norm(b - a))
        n = max(int(np.ceil(length / step)), 1)
        t = np.arange(n) / n
        out.append(a + t[:, None] * (b - a))
    return np.concatenate(out)


def oracle_distance_direction(
    poly: Polygon, points: np.ndarray, step: float = 1e-3
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force nearest-boundary oracle via dense sampling.

    Samples the boundary polyline at ``step`` px and takes the nearest
    sample per query point (KD-tree). Distance error is bounded by
    ``step / 2``; direction error by ``(step / 2) / distance``.
    """
    samples = dense_boundary_samples(poly, step)
    tree = cKDTree(samples)
    d, idx = tree.query(np.asarray(points, dtype=float))
    vec = np.asarray(points, dtype=float) - samples[idx]
    norm = np.linalg.norm(vec, axis=1, keepdims=True)
    direction = np.divide(vec, norm, out=np.zeros_like(vec), where=norm > 0)
    return d, direction


def ambiguous_nearest(
    points: np.ndarray,
    poly: Polygon,
    dist_tol: float = 2e-3,
    foot_tol: float = 1e-2,
) -> np.ndarray:
    """Mask of points whose nearest boundary point is ambiguous.

    True where a second boundary location more than ``foot_tol`` away from
    the nearest one lies within ``dist_tol`` of the minimum distance
    (medial-axis points). The direction field is undefined there, so
    oracle comparisons skip them.
    """
    p = np.asarray(points, dtype=float)
    a = poly.points
    b = np.roll(a, -1, axis=0)
    ab = b - a
    denom = np.einsum("kc,kc->k", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    ap = p[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mkc,kc->mk", ap, ab) / denom[None, :], 0.0, 1.0)
    foot = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(p[:, None, :] - foot, axis=2)
    k1 = np.argmin(d, axis=1)
    m = np.arange(len(p))
    d1 = d[m, k1]
    f1 = foot[m, k1]
    near = d < (d1 + dist_tol)[:, None]
    far_foot = np.linalg.norm(foot - f1[:, None, :], axis=2) > foot_tol
    return np.any(near & far_foot, axis=1)


def save_bundle(bundle: GroundTruthBundle, path) -> None:
    """Write the bundle as a multi-channel .npy plus a JSON sidecar."""
    import json
    from pathlib import Path

    path = Path(path)
    arr = bundle.to_array().astype(np.float32)
    np.save(path, arr)
    npy = path if path.suffix == ".npy" else path.with_suffix(".npy")
    sidecar = npy.with_suffix(".json")
    sidecar.write_text(
        json.dumps({"shape": list(arr.shape), "channels": bundle.channel_names}, indent=2)
    )


def load_bundle(path) -> GroundTruthBundle:
    from pathlib import Path

    arr = np.load(Path(path))
    return GroundTruthBundle(
        cls=arr[..., 0].astype(float),
        dist=arr[..., 1].astype(float),
        dir=arr[..., 2:4].astype(float),
        segment_size=arr[..., 4].astype(float),
    )
