"""Coarse boundary proposals from predicted field maps.

The distance field is binarized at ``th_d``, 8-connected components are
extracted, each component's outer contour is traced with Moore-neighbor
border following, simplified, and resampled to a fixed number of control
points. The mean classification probability over the component scores the
proposal; low-confidence proposals are filtered at ``th_s``.

Coordinates are in the pixel space of the input maps; callers working at a
coarser feature stride rescale afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DegeneratePolygonError
from .geometry import ControlPolygon, Polygon, resample_uniform, signed_area

# Moore neighborhood in clockwise screen order (x right, y down), from West.
_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class ProposalConfig:
    th_d: float = 0.3
    th_s: float = 0.8
    n_control: int = 20
    min_area: int = 16

    def __post_init__(self):
        if not (0.0 < self.th_d < 1.0):
            raise ConfigError(f"th_d must be in (0, 1), got {self.th_d}")
        if not (0.0 < self.th_s < 1.0):
            raise ConfigError(f"th_s must be in (0, 1), got {self.th_s}")
        if self.n_control < 3:
            raise ConfigError(f"n_control must be >= 3, got {self.n_control}")
        if self.min_area < 0:
            raise ConfigError(f"min_area must be >= 0, got {self.min_area}")


@dataclass(frozen=True)
class FieldMaps:
    """Predicted (or ground-truth) prior maps: cls/dist (H, W), dir (H, W, 2)."""

    cls: np.ndarray
    dist: np.ndarray
    dir: np.ndarray

    def prior_stack(self) -> np.ndarray:
        """(H, W, 4) channel stack in order cls, dist, dir_x, dir_y."""
        return np.dstack([self.cls, self.dist, self.dir[..., 0], self.dir[..., 1]])


@dataclass(frozen=True)
class BoundaryProposal:
    contour: ControlPolygon
    confidence: float


def moore_trace(mask: np.ndarray) -> np.ndarray:
    """Outer contour of the foreground blob in ``mask`` (one component).

    Moore-neighbor border following from the raster-first foreground pixel,
    with Jacob's stopping criterion. Returns the visited pixel centers as an
    (L, 2) array of (x, y); holes are ignored. A single isolated pixel
    yields a length-1 output.
    """
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return np.zeros((0, 2))
    i0 = np.lexsort((xs, ys))[0]
    start = (int(xs[i0]), int(ys[i0]))
    h, w = mask.shape

    def fg(p):
        x, y = p
        return 0 <= x < w and 0 <= y < h and mask[y, x]

    contour = [start]
    backtrack = (start[0] - 1, start[1])
    p = start
    first_state = (p, backtrack)
    max_steps = 4 * int(mask.sum()) + 16
    for _ in range(max_steps):
        # scan Moore neighbors clockwise, starting just after the backtrack
        dx, dy = backtrack[0] - p[0], backtrack[1] - p[1]
        k0 = _MOORE.index((dx, dy))
        nxt = None
        for j in range(1, 9):
            cand = _MOORE[(k0 + j) % 8]
            q = (p[0] + cand[0], p[1] + cand[1])
            if fg(q):
                prev = _MOORE[(k0 + j - 1) % 8]
                nxt = (q, (p[0] + prev[0], p[1] + prev[1]))
                break
        if nxt is None:
            break  # isolated pixel
        p, backtrack = nxt
        if (p, backtrack) == first_state:
            break
        contour.append(p)
    return np.asarray(contour, dtype=float)


def simplify_contour(points: np.ndarray) -> np.ndarray:
    """Drop repeated points and interior points of collinear runs."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return pts
    keep = []
    n = len(pts)
    for i in range(n):
        prv, cur, nxt = pts[(i - 1) % n], pts[i], pts[(i + 1) % n]
        if np.array_equal(cur, nxt):
            continue
        cross = (cur[0] - prv[0]) * (nxt[1] - prv[1]) - (cur[1] - prv[1]) * (nxt[0] - prv[0])
        if cross == 0 and not np.array_equal(prv, nxt):
            continue
        keep.append(i)
    return pts[keep] if keep else pts[:0]


def mask_to_contour(mask: np.ndarray, n_control: int) -> ControlPolygon | None:
    """Trace one blob and resample to ``n_control`` points; None if degenerate."""
    traced = simplify_contour(moore_trace(mask))
    if len(traced) < 3:
        return None
    try:
        poly = Polygon(traced)
    except DegeneratePolygonError:
        return None
    return resample_uniform(poly, n_control)


def extract_candidates(fields: FieldMaps, cfg: ProposalConfig) -> list[BoundaryProposal]:
    """Threshold the distance field and turn each component into a proposal.

    Components are visited in raster order of their first pixel, so the
    output is deterministic. An empty mask yields an empty list.
    """
    mask = fields.dist > cfg.th_d
    labels, n_comp = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    out = []
    for lbl in range(1, n_comp + 1):
        comp = labels == lbl
        if int(comp.sum()) < max(cfg.min_area, 1):
            continue
        contour = mask_to_contour(comp, cfg.n_control)
        if contour is None:
            continue
        confidence = float(fields.cls[comp].mean())
        out.append(BoundaryProposal(contour=contour, confidence=confidence))
    return out


def filter_by_confidence(
    cands: list[BoundaryProposal], cfg: ProposalConfig
) -> list[BoundaryProposal]:
    """Keep proposals with confidence >= th_s, preserving order."""
    return [c for c in cands if c.confidence >= cfg.th_s]
