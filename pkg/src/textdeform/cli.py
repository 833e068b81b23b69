"""Command-line interface.

Subcommands cover the whole pipeline: ``synth`` writes a synthetic
corpus, ``gtgen`` derives per-pixel field targets, ``train`` fits a
detector, ``infer`` runs detection and writes polygons plus overlays,
``eval`` scores predictions against a manifest, and ``ablate`` trains
the comparison grid. A JSON config file provides defaults; flags
override it. Every command writes a resolved-config snapshot next to
its outputs.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numeric failures during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, DataError, NumericError
from .evaluation import EvalConfig, EvalResult, ablate, evaluate, render_overlay, save_metrics
from .fields import compute_ground_truth, save_bundle
from .losses import LossConfig
from .network import ENCODER_NAMES, ModelConfig, build_model
from .proposals import ProposalConfig
from .synthdata import AugmentConfig, SynthConfig, generate, load_dataset, save_dataset
from .trainer import TrainConfig, checkpoint_load, train

_EXIT_CONFIG = 2
_EXIT_DATA = 3
_EXIT_NUMERIC = 4


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, default=str))
    tmp.replace(path)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def _dataclass_from(section: dict, cls, **overrides):
    known = {f for f in cls.__dataclass_fields__}
    bad = set(section) - known
    if bad:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    for key, value in list(merged.items()):
        if isinstance(value, list):
            merged[key] = tuple(value)
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def _parse_prior_mask(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    if text in ("", "none"):
        return ()
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _model_config(data: dict, args) -> ModelConfig:
    return _dataclass_from(
        data.get("model", {}),
        ModelConfig,
        n_iters=args.iters,
        encoder=args.encoder,
        n_control=args.n_control,
        stride=args.stride,
        prior_mask=_parse_prior_mask(args.prior_mask),
    )


def _proposal_config(data: dict, args) -> ProposalConfig:
    return _dataclass_from(
        data.get("proposal", {}),
        ProposalConfig,
        th_d=args.th_d,
        th_s=args.th_s,
        n_control=args.n_control,
    )


def _train_config(data: dict, args, out_dir: str | None) -> TrainConfig:
    section = dict(data.get("train", {}))
    for key in ("model", "loss", "proposal", "augment", "eval"):
        section.pop(key, None)
    cfg = _dataclass_from(
        section,
        TrainConfig,
        epochs=args.epochs,
        seed=args.seed,
        out_dir=out_dir,
    )
    return replace(
        cfg,
        model=_model_config(data, args),
        loss=_dataclass_from(data.get("loss", {}), LossConfig),
        proposal=_proposal_config(data, args),
        augment=_dataclass_from(data.get("augment", {}), AugmentConfig),
        eval_cfg=_dataclass_from(data.get("eval", {}), EvalConfig),
    )


def _snapshot(out: Path, payload: dict) -> None:
    _write_json(out / "config.json", payload)


def _load_samples(path: str) -> list:
    samples = load_dataset(path)
    if not samples:
        raise DataError(f"dataset at {path} is empty")
    return samples


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    data = _load_config_file(args.config)
    cfg = _dataclass_from(data.get("synth", {}), SynthConfig, image_size=args.image_size)
    samples = generate(cfg, args.n, seed=args.seed)
    out = Path(args.out)
    save_dataset(out, samples)
    _snapshot(out, {"synth": asdict(cfg), "n": args.n, "seed": args.seed})
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _cmd_gtgen(args) -> int:
    samples = _load_samples(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        bundle = compute_ground_truth(sample)
        save_bundle(bundle, out / f"{i:05d}.npy")
    _snapshot(out, {"data": args.data, "n": len(samples)})
    print(f"wrote {len(samples)} field bundles to {out}")
    return 0


def _cmd_train(args) -> int:
    data = _load_config_file(args.config)
    cfg = _train_config(data, args, args.out)
    train_samples = _load_samples(args.data)
    val_samples = _load_samples(args.val) if args.val else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(
        out,
        {
            "train": {k: v for k, v in asdict(cfg).items() if not isinstance(v, dict)},
            "model": asdict(cfg.model),
            "loss": asdict(cfg.loss),
            "proposal": asdict(cfg.proposal),
            "augment": asdict(cfg.augment),
            "eval": asdict(cfg.eval_cfg),
        },
    )
    result = train(train_samples, val_samples, cfg, resume_path=args.resume)
    final = result.final_eval
    print(
        f"trained {len(result.history)} epochs; "
        f"P={final.precision:.4f} R={final.recall:.4f} F={final.f_measure:.4f}"
    )
    return 0


def _cmd_infer(args) -> int:
    data = _load_config_file(args.config)
    manifest = checkpoint_load(args.checkpoint)
    model_cfg = _model_config(data, args)
    model = build_model(model_cfg, seed=0)
    try:
        checkpoint_load(args.checkpoint, model, model_cfg=model_cfg)
    except CheckpointError:
        raise ConfigError(
            "checkpoint does not match the requested model configuration; "
            "pass matching --encoder/--iters/--n-control/--stride or a config file"
        ) from None
    model.eval()
    pcfg = _proposal_config(data, args)
    samples = _load_samples(args.data)
    out = Path(args.out)
    (out / "overlays").mkdir(parents=True, exist_ok=True)

    import torch

    records = []
    for i in range(0, len(samples), 8):
        chunk = samples[i : i + 8]
        arr = np.stack([s.image.values for s in chunk]).astype(np.float32)
        images = torch.from_numpy(arr).permute(0, 3, 1, 2)
        batch_dets = model.detect(images, pcfg)
        for j, dets in enumerate(batch_dets):
            idx = i + j
            records.append(
                {
                    "image": f"{idx:05d}",
                    "detections": [
                        {
                            "polygon": det.polygon.tolist(),
                            "confidence": det.confidence,
                            "iterations": [c.tolist() for c in det.contours],
                        }
                        for det in dets
                    ],
                }
            )
            overlay = render_overlay(chunk[j].image.values, dets)
            overlay.save(out / "overlays" / f"{idx:05d}.png")
    _write_json(out / "predictions.json", records)
    _snapshot(
        out,
        {
            "checkpoint": args.checkpoint,
            "checkpoint_epoch": manifest["epoch"],
            "model": asdict(model_cfg),
            "proposal": asdict(pcfg),
        },
    )
    print(f"wrote predictions for {len(records)} images to {out}")
    return 0


def _cmd_eval(args) -> int:
    pred_path = Path(args.pred)
    if not pred_path.is_file():
        raise DataError(f"predictions file not found: {pred_path}")
    try:
        records = json.loads(pred_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable predictions {pred_path}: {exc}") from exc
    samples = _load_samples(args.data)
    if len(records) != len(samples):
        raise DataError(
            f"{len(records)} prediction records for {len(samples)} dataset images"
        )
    from .network import Detection

    detections = []
    for rec in records:
        dets = []
        for d in rec.get("detections", []):
            ring = np.asarray(d["polygon"], dtype=float)
            dets.append(Detection(contours=[ring], confidence=float(d["confidence"])))
        detections.append(dets)
    gt_polys = [[inst.boundary.points for inst in s.instances] for s in samples]
    gt_ignore = [[inst.ignore for inst in s.instances] for s in samples]
    ecfg = EvalConfig(iou_thresh=args.iou)
    result = evaluate(detections, gt_polys, gt_ignore, ecfg)
    print(
        f"P={result.precision:.4f} R={result.recall:.4f} F={result.f_measure:.4f} "
        f"(tp={result.n_tp} fp={result.n_fp} fn={result.n_fn})"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_metrics(result, out / "metrics.json")
        _snapshot(out, {"pred": args.pred, "data": args.data, "iou": args.iou})
    return 0


def _cmd_ablate(args) -> int:
    data = _load_config_file(args.config)
    cfg = _train_config(data, args, None)
    train_samples = _load_samples(args.data)
    val_samples = _load_samples(args.val)
    cells = None
    if args.cells:
        cells = [c.strip() for c in args.cells.split(",") if c.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(out, {"train": asdict(cfg), "cells": cells or "default"})
    rows = ablate(train_samples, val_samples, cfg, out_dir=out, cells=cells)
    for row in rows:
        print(
            f"{row['cell']:>14s}  F={row['f_measure']:.4f} "
            f"P={row['precision']:.4f} R={row['recall']:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with section defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=None, help="deformation iterations")
    p.add_argument("--th-d", dest="th_d", type=float, default=None, help="distance threshold")
    p.add_argument("--th-s", dest="th_s", type=float, default=None, help="confidence threshold")
    p.add_argument("--n-control", dest="n_control", type=int, default=None)
    p.add_argument("--encoder", choices=ENCODER_NAMES, default=None)
    p.add_argument("--prior-mask", dest="prior_mask", default=None,
                   help="comma list of prior channels to zero (cls,dist,dir) or 'none'")
    p.add_argument("--stride", type=int, default=None, choices=(1, 2, 4))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textdeform",
        description="Arbitrary-shape text detection by deforming boundary proposals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("gtgen", help="write ground-truth field bundles")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_gtgen)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None)
    _add_common_model_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="run detection with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_common_model_flags(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train the ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--cells", default=None, help="comma list of ablation cells")
    _add_common_model_flags(p)
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
