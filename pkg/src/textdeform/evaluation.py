"""Detection metrics, per-iteration refinement reports, and ablations.

Matching is greedy: predictions are visited in descending confidence and
claim the unmatched ground-truth region of highest IoU when that IoU
clears the threshold. Regions flagged ``ignore`` never count as hits or
misses; a prediction whose best overlap is with an ignored region is
excluded from the precision denominator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import polygon_iou
from .network import Detection


@dataclass(frozen=True)
class EvalConfig:
    iou_thresh: float = 0.5
    supersample: int = 4

    def __post_init__(self):
        if not (0.0 < self.iou_thresh <= 1.0):
            raise ConfigError(f"iou_thresh must be in (0, 1], got {self.iou_thresh}")
        if self.supersample < 1:
            raise ConfigError(f"supersample must be >= 1, got {self.supersample}")


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f_measure: float
    n_tp: int
    n_fp: int
    n_fn: int


def _safe_iou(pred: np.ndarray, gt: np.ndarray, supersample: int) -> float:
    if len(pred) < 3:
        return 0.0
    try:
        return polygon_iou(pred, gt, supersample=supersample)
    except ValueError:
        return 0.0


def match_image(
    pred_polys: list[np.ndarray],
    confidences: list[float],
    gt_polys: list[np.ndarray],
    ignore: list[bool] | None = None,
    cfg: EvalConfig = EvalConfig(),
) -> tuple[int, int, int]:
    """Greedy confidence-ordered matching for one image: (tp, fp, fn)."""
    ignore = ignore or [False] * len(gt_polys)
    order = np.argsort(-np.asarray(confidences, dtype=float), kind="stable")
    claimed = [False] * len(gt_polys)
    tp = fp = 0
    for i in order:
        best_j, best_iou = -1, 0.0
        for j, g in enumerate(gt_polys):
            if claimed[j] or ignore[j]:
                continue
            iou = _safe_iou(pred_polys[i], g, cfg.supersample)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_iou >= cfg.iou_thresh:
            claimed[best_j] = True
            tp += 1
            continue
        ignored_hit = any(
            ig and _safe_iou(pred_polys[i], g, cfg.supersample) >= cfg.iou_thresh
            for g, ig in zip(gt_polys, ignore)
        )
        if not ignored_hit:
            fp += 1
    fn = sum(1 for j, ig in zip(range(len(gt_polys)), ignore) if not ig and not claimed[j])
    return tp, fp, fn


def evaluate(
    detections: list[list[Detection]],
    gt_polys: list[list[np.ndarray]],
    gt_ignore: list[list[bool]] | None = None,
    cfg: EvalConfig = EvalConfig(),
) -> EvalResult:
    """Micro-averaged precision/recall/F over a set of images.

    Empty-over-empty conventions: a ratio with a zero denominator is 1.0,
    and F is 0.0 when precision + recall is 0.
    """
    if len(detections) != len(gt_polys):
        raise ValueError(
            f"got {len(detections)} detection lists for {len(gt_polys)} images"
        )
    tp = fp = fn = 0
    for i, dets in enumerate(detections):
        ignore = gt_ignore[i] if gt_ignore else None
        t, f, n = match_image(
            [d.polygon for d in dets],
            [d.confidence for d in dets],
            gt_polys[i],
            ignore,
            cfg,
        )
        tp, fp, fn = tp + t, fp + f, fn + n
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f_measure = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalResult(precision, recall, f_measure, tp, fp, fn)


def iteration_iou_report(
    detections: list[list[Detection]],
    gt_polys: list[list[np.ndarray]],
    cfg: EvalConfig = EvalConfig(),
) -> dict[int, float]:
    """Mean IoU against the matched ground truth after each iteration.

    Detections are matched greedily on their final contour; for every
    matched pair the IoU of each refinement stage (1-based; 0 is the
    coarse proposal) is averaged over all pairs. Empty when nothing
    matches.
    """
    sums: dict[int, float] = {}
    count = 0
    for dets, gts in zip(detections, gt_polys):
        claimed = [False] * len(gts)
        order = np.argsort(-np.asarray([d.confidence for d in dets]), kind="stable")
        for i in order:
            det = dets[i]
            best_j, best_iou = -1, 0.0
            for j, g in enumerate(gts):
                if claimed[j]:
                    continue
                iou = _safe_iou(det.polygon, g, cfg.supersample)
                if iou > best_iou:
                    best_j, best_iou = j, iou
            if best_iou < cfg.iou_thresh:
                continue
            claimed[best_j] = True
            count += 1
            for stage, ring in enumerate(det.contours):
                sums[stage] = sums.get(stage, 0.0) + _safe_iou(
                    ring, gts[best_j], cfg.supersample
                )
    return {stage: total / count for stage, total in sums.items()} if count else {}


# ---------------------------------------------------------------------------
# ablation


def ablate(
    train_samples,
    val_samples,
    base_cfg,
    out_dir: str | Path | None = None,
    cells: list[str] | None = None,
) -> list[dict]:
    """Train one model per ablation cell under a shared budget.

    Cells: ``full`` (the base configuration), ``prior_masked`` (distance
    and direction channels zeroed at the deformation input), and one per
    alternative sequence encoder. Returns one result row per cell and,
    when ``out_dir`` is given, writes ``ablation.csv`` and
    ``ablation.md``.
    """
    from .trainer import train  # deferred: trainer imports this module

    cells = cells or ["full", "prior_masked", "fc", "rnn", "circular_conv", "gcn"]
    rows = []
    for cell in cells:
        model_cfg = base_cfg.model
        if cell == "full":
            pass
        elif cell == "prior_masked":
            model_cfg = replace(model_cfg, prior_mask=("dist", "dir"))
        elif cell in ("fc", "rnn", "circular_conv", "gcn", "adaptive"):
            model_cfg = replace(model_cfg, encoder=cell)
        else:
            raise ConfigError(f"unknown ablation cell {cell!r}")
        cell_cfg = replace(base_cfg, model=model_cfg, out_dir=None)
        result = train(train_samples, val_samples, cell_cfg)
        rows.append(
            {
                "cell": cell,
                "encoder": model_cfg.encoder,
                "prior_mask": ",".join(model_cfg.prior_mask) or "none",
                "precision": result.final_eval.precision,
                "recall": result.final_eval.recall,
                "f_measure": result.final_eval.f_measure,
                "epochs": len(result.history),
            }
        )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_ablation_reports(rows, out)
    return rows


def write_ablation_reports(rows: list[dict], out_dir: Path) -> None:
    fields = ["cell", "encoder", "prior_mask", "precision", "recall", "f_measure", "epochs"]
    tmp = out_dir / "ablation.csv.tmp"
    with tmp.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    tmp.replace(out_dir / "ablation.csv")

    lines = ["| " + " | ".join(fields) + " |", "|" + "---|" * len(fields)]
    for row in rows:
        cells = [
            f"{row[k]:.4f}" if isinstance(row[k], float) else str(row[k]) for k in fields
        ]
        lines.append("| " + " | ".join(cells) + " |")
    tmp = out_dir / "ablation.md.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(out_dir / "ablation.md")


def save_metrics(result: EvalResult, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(asdict(result), indent=2))
    tmp.replace(path)


# ---------------------------------------------------------------------------
# overlays


def render_overlay(image: np.ndarray, detections: list[Detection]):
    """Draw proposals (blue) and final boundaries (green) on a copy.

    ``image`` is (H, W, 3) float in [0, 1]; returns a PIL image.
    """
    from PIL import Image, ImageDraw

    canvas = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(canvas)
    for det in detections:
        first = [tuple(p) for p in det.contours[0]]
        draw.polygon(first, outline=(40, 90, 255))
        final = [tuple(p) for p in det.polygon]
        draw.polygon(final, outline=(0, 200, 70))
    return canvas
