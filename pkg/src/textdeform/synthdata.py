"""Synthetic corpora of striped, text-like shapes on noisy backgrounds.

Three shape families stand in for printed lines of text: rotated
rectangles, circular-arc bands, and wavy bands. Interiors get a periodic
stripe texture (stand-in for character strokes), backgrounds get smooth
plus fine noise. Pixel values are snapped to 256 levels so a PNG
round-trip is lossless.

Augmentation follows the usual recipe for this kind of detector: a
truncated-Gaussian rotation, a random crop rescaled to the original size,
and a horizontal flip. Boundaries are transformed analytically and the
ground-truth fields are recomputed afterwards, never warped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from shapely.geometry import Polygon as ShapelyPolygon
from shapely.geometry import box as shapely_box

from .errors import ConfigError, DataError
from .fields import AnnotatedSample, TextInstance

log = logging.getLogger(__name__)

_FAMILIES = ("rect", "arc", "wave")


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    min_instances: int = 1
    max_instances: int = 3
    thickness_range: tuple[float, float] = (10.0, 22.0)
    length_range: tuple[float, float] = (40.0, 90.0)
    min_gap: float = 8.0
    margin: float = 4.0
    stripe_period_range: tuple[float, float] = (3.0, 6.0)
    text_level: float = 0.22
    background_level: float = 0.62
    max_tries: int = 60

    def __post_init__(self):
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        if not (1 <= self.min_instances <= self.max_instances):
            raise ConfigError(
                f"need 1 <= min_instances <= max_instances, got "
                f"{self.min_instances}..{self.max_instances}"
            )
        if self.thickness_range[0] <= 2.0:
            raise ConfigError("thickness_range lower bound must exceed 2 px")
        if self.min_gap <= 0 or self.margin < 0:
            raise ConfigError("min_gap must be positive and margin non-negative")


@dataclass(frozen=True)
class AugmentConfig:
    rotate_sigma_deg: float = 20.0
    rotate_limit_deg: float = 60.0
    crop_scale_range: tuple[float, float] = (0.7, 1.0)
    flip_prob: float = 0.5
    keep_area_frac: float = 0.5
    fill_value: float = 0.55


def _rng(seed_seq) -> np.random.Generator:
    return np.random.default_rng(seed_seq)


# ---------------------------------------------------------------------------
# shape families


def _pose(points: np.ndarray, angle: float, center: np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T + center


def _rect_shape(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    length = rng.uniform(*cfg.length_range)
    thick = rng.uniform(*cfg.thickness_range)
    hl, ht = length / 2.0, thick / 2.0
    return np.array([[-hl, -ht], [hl, -ht], [hl, ht], [-hl, ht]])


def _arc_shape(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    thick = rng.uniform(*cfg.thickness_range)
    radius = rng.uniform(thick / 2.0 + 6.0, 60.0)
    span = rng.uniform(np.deg2rad(60.0), np.deg2rad(160.0))
    # cap arc length to the configured text length
    span = min(span, cfg.length_range[1] / radius)
    t = np.linspace(-span / 2.0, span / 2.0, 16)
    outer = np.stack([(radius + thick / 2) * np.cos(t), (radius + thick / 2) * np.sin(t)], axis=1)
    inner = np.stack([(radius - thick / 2) * np.cos(t), (radius - thick / 2) * np.sin(t)], axis=1)
    pts = np.vstack([outer, inner[::-1]])
    return pts - pts.mean(axis=0)


def _wave_shape(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    thick = rng.uniform(*cfg.thickness_range)
    # a wave needs room for its period; never exceed the configured range
    lo = min(max(50.0, cfg.length_range[0]), cfg.length_range[1])
    length = rng.uniform(lo, cfg.length_range[1])
    amp = rng.uniform(2.0, 4.0)
    xs = np.linspace(-length / 2.0, length / 2.0, 16)
    ys = amp * np.sin(2.0 * np.pi * (xs + length / 2.0) / length)
    slope = amp * 2.0 * np.pi / length * np.cos(2.0 * np.pi * (xs + length / 2.0) / length)
    # unit normals of the centerline
    norm = np.stack([-slope, np.ones_like(slope)], axis=1)
    norm /= np.linalg.norm(norm, axis=1, keepdims=True)
    center = np.stack([xs, ys], axis=1)
    pts = np.vstack([center + norm * thick / 2.0, (center - norm * thick / 2.0)[::-1]])
    return pts - pts.mean(axis=0)


_SHAPE_FNS = {"rect": _rect_shape, "arc": _arc_shape, "wave": _wave_shape}


def _place_instances(rng: np.random.Generator, cfg: SynthConfig) -> list[np.ndarray]:
    """Rejection-sample non-overlapping shapes inside the image margin."""
    size = float(cfg.image_size - 1)
    frame = shapely_box(cfg.margin, cfg.margin, size - cfg.margin, size - cfg.margin)
    n_want = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    placed: list[np.ndarray] = []
    shapes: list[ShapelyPolygon] = []
    for _ in range(cfg.max_tries * n_want):
        if len(placed) == n_want:
            break
        family = _FAMILIES[rng.integers(0, len(_FAMILIES))]
        base = _SHAPE_FNS[family](rng, cfg)
        angle = rng.uniform(0.0, np.pi)
        center = rng.uniform(cfg.margin, size - cfg.margin, size=2)
        pts = _pose(base, angle, center)
        cand = ShapelyPolygon(pts)
        if not cand.is_valid or cand.area < 60.0:
            continue
        if not cand.within(frame):
            continue
        if any(cand.distance(prev) < cfg.min_gap for prev in shapes):
            continue
        placed.append(pts)
        shapes.append(cand)
    return placed


# ---------------------------------------------------------------------------
# rendering


def _render(rng: np.random.Generator, cfg: SynthConfig, polys: list[np.ndarray]) -> np.ndarray:
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    smooth = ndimage.gaussian_filter(rng.standard_normal((size, size)), 3.0)
    img = cfg.background_level + 0.08 * smooth + 0.02 * rng.standard_normal((size, size))
    from .geometry import points_in_polygon

    for pts in polys:
        x0, y0 = np.floor(pts.min(axis=0)).astype(int)
        x1, y1 = np.ceil(pts.max(axis=0)).astype(int) + 1
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, size), min(y1, size)
        sub = np.stack([xx[y0:y1, x0:x1].ravel(), yy[y0:y1, x0:x1].ravel()], axis=1)
        mask = points_in_polygon(sub, pts).reshape(y1 - y0, x1 - x0)
        edge = pts[1] - pts[0]
        phi = np.arctan2(edge[1], edge[0])
        period = rng.uniform(*cfg.stripe_period_range)
        u = xx[y0:y1, x0:x1] * np.cos(phi) + yy[y0:y1, x0:x1] * np.sin(phi)
        stripes = 0.5 + 0.5 * np.sin(2.0 * np.pi * u / period)
        tex = cfg.text_level + 0.10 * stripes + 0.03 * rng.standard_normal(mask.shape)
        region = img[y0:y1, x0:x1]
        region[mask] = tex[mask]
    img = np.clip(img, 0.0, 1.0)
    tint = np.array([1.0, 0.97, 0.93])
    rgb = np.clip(img[..., None] * tint, 0.0, 1.0)
    return np.round(rgb * 255.0) / 255.0


def generate_sample(cfg: SynthConfig, seed_seq) -> AnnotatedSample:
    rng = _rng(seed_seq)
    polys = _place_instances(rng, cfg)
    image = _render(rng, cfg, polys)
    instances = [TextInstance(boundary=p, id=i) for i, p in enumerate(polys)]
    return AnnotatedSample(image=image, instances=instances)


def generate(cfg: SynthConfig, n_samples: int, seed: int = 0) -> list[AnnotatedSample]:
    """Deterministic corpus: sample ``idx`` depends only on (seed, idx)."""
    return [
        generate_sample(cfg, np.random.SeedSequence([seed, idx])) for idx in range(n_samples)
    ]


# ---------------------------------------------------------------------------
# augmentation


def _affine_image(img: np.ndarray, fwd: np.ndarray, offset: np.ndarray, cval: float) -> np.ndarray:
    """Apply p_out = fwd @ p_in + offset to an (H, W, C) image, bilinear."""
    inv = np.linalg.inv(fwd)
    # scipy maps output (y, x) indices to input ones: in = M @ out + shift
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    m_yx = swap @ inv @ swap
    shift = swap @ (-inv @ offset)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.affine_transform(
            img[..., c], m_yx, offset=shift, order=1, mode="constant", cval=cval
        )
    return out


def _clip_instances(
    polys: list[np.ndarray],
    window: ShapelyPolygon,
    keep_frac: float,
) -> list[np.ndarray]:
    """Intersect boundaries with a window, dropping mostly-lost instances."""
    kept = []
    for pts in polys:
        orig = ShapelyPolygon(pts)
        if not orig.is_valid:
            orig = orig.buffer(0)
        if orig.is_empty:
            continue
        cut = orig.intersection(window)
        if cut.is_empty:
            continue
        if cut.geom_type == "MultiPolygon":
            cut = max(cut.geoms, key=lambda g: g.area)
        if cut.geom_type != "Polygon" or cut.area < max(keep_frac * orig.area, 4.0):
            continue
        ring = np.asarray(cut.exterior.coords)[:-1]
        if len(ring) >= 3:
            kept.append(ring)
    return kept


def _truncated_normal_angle(rng: np.random.Generator, sigma: float, limit: float) -> float:
    for _ in range(1000):
        a = rng.normal(0.0, sigma)
        if abs(a) < limit:
            return a
    return 0.0


def augment(
    sample: AnnotatedSample, cfg: AugmentConfig, rng: np.random.Generator
) -> AnnotatedSample:
    """Rotate, crop-and-rescale, and maybe flip one sample.

    Boundaries move through the exact affine maps; callers recompute the
    ground-truth fields on the result.
    """
    img = sample.image.values
    h, w = img.shape[:2]
    polys = [inst.boundary.points.copy() for inst in sample.instances]
    frame = shapely_box(0.0, 0.0, float(w - 1), float(h - 1))

    angle = np.deg2rad(
        _truncated_normal_angle(rng, cfg.rotate_sigma_deg, cfg.rotate_limit_deg)
    )
    c, s = np.cos(angle), np.sin(angle)
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    fwd = np.array([[c, -s], [s, c]])
    offset = center - fwd @ center
    img = _affine_image(img, fwd, offset, cfg.fill_value)
    polys = [p @ fwd.T + offset for p in polys]
    polys = _clip_instances(polys, frame, cfg.keep_area_frac)

    scale = rng.uniform(*cfg.crop_scale_range)
    win = scale * (w - 1)
    ox = rng.uniform(0.0, (w - 1) - win)
    oy = rng.uniform(0.0, (h - 1) - win)
    zoom = (w - 1) / win
    fwd = np.array([[zoom, 0.0], [0.0, zoom]])
    offset = np.array([-ox * zoom, -oy * zoom])
    window = shapely_box(ox, oy, ox + win, oy + win)
    polys = _clip_instances(polys, window, cfg.keep_area_frac)
    img = _affine_image(img, fwd, offset, cfg.fill_value)
    polys = [p @ fwd.T + offset for p in polys]

    if rng.uniform() < cfg.flip_prob:
        img = img[:, ::-1].copy()
        polys = [np.stack([(w - 1) - p[:, 0], p[:, 1]], axis=1) for p in polys]

    polys = _clip_instances(polys, frame, keep_frac=0.0)
    img = np.clip(img, 0.0, 1.0)
    instances = [TextInstance(boundary=p, id=i) for i, p in enumerate(polys)]
    return AnnotatedSample(image=img, instances=instances)


# ---------------------------------------------------------------------------
# dataset io


def save_dataset(path: str | Path, samples: list[AnnotatedSample]) -> None:
    """Write PNG images plus a JSON manifest of polygon annotations."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        name = f"images/{i:05d}.png"
        arr = np.round(sample.image.values * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(root / name)
        entries.append(
            {
                "image": name,
                "polygons": [inst.boundary.points.tolist() for inst in sample.instances],
                "ignore": [bool(inst.ignore) for inst in sample.instances],
            }
        )
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(entries, indent=1))
    tmp.replace(root / "manifest.json")


def load_dataset(path: str | Path) -> list[AnnotatedSample]:
    root = Path(path)
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise DataError(f"no manifest.json under {root}")
    try:
        entries = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest {manifest}: {exc}") from exc
    samples = []
    for entry in entries:
        img_path = root / entry["image"]
        if not img_path.is_file():
            raise DataError(f"missing image {img_path}")
        arr = np.asarray(Image.open(img_path).convert("RGB"), dtype=float) / 255.0
        ignore = entry.get("ignore") or [False] * len(entry["polygons"])
        if len(ignore) != len(entry["polygons"]):
            raise DataError(f"ignore list length mismatch in {entry['image']}")
        instances = [
            TextInstance(boundary=np.asarray(p, dtype=float), id=k, ignore=bool(ig))
            for k, (p, ig) in enumerate(zip(entry["polygons"], ignore))
        ]
        samples.append(AnnotatedSample(image=arr, instances=instances))
    return samples
