"""Training loop with warm-up proposals, logging, and exact resume.

Every stochastic choice is drawn from a stream keyed by
(seed, epoch, item), so a run is a pure function of its config and a
resumed run replays the remaining epochs exactly. Checkpoints carry the
model weights, the full optimizer state, and a hash of the model config;
loading against a different architecture is refused.

Early epochs (the warm-up fraction) deform proposals traced from the
ground-truth fields and sample ground-truth prior maps, which lets the
refinement head learn before the field head is reliable. Afterwards the
pipeline switches to its own predictions end to end. Augmentation
transforms boundaries analytically and the target fields are recomputed
from the moved polygons each time.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError, ConfigError, NumericError
from .evaluation import EvalConfig, EvalResult, evaluate
from .fields import AnnotatedSample, GroundTruthBundle, compute_ground_truth
from .geometry import points_in_polygon, resample_uniform
from .losses import LossConfig, total_loss
from .network import ModelConfig, TextDetector, build_model
from .proposals import (
    FieldMaps,
    ProposalConfig,
    extract_candidates,
    filter_by_confidence,
    mask_to_contour,
)
from .synthdata import AugmentConfig, augment

_MAGIC = b"TDCKPT01"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    lr_decay: float = 0.9
    lr_step: int = 50
    warmup_frac: float = 0.1
    seed: int = 0
    eval_every: int = 5
    early_stop_f: float = 0.0
    stop_after_epoch: int | None = None
    augment_enabled: bool = True
    out_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_cfg: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or not (0.0 < self.lr_decay <= 1.0) or self.lr_step < 1:
            raise ConfigError("invalid learning-rate schedule")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ConfigError(f"warmup_frac must be in [0, 1], got {self.warmup_frac}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.stop_after_epoch is not None and self.stop_after_epoch < 0:
            raise ConfigError("stop_after_epoch must be >= 0")
        if self.model.stride != 1:
            raise ConfigError("training assumes stride 1; coarser strides are inference-only")
        if self.proposal.n_control != self.model.n_control:
            raise ConfigError(
                f"proposal n_control {self.proposal.n_control} != "
                f"model n_control {self.model.n_control}"
            )

    @property
    def warmup_epochs(self) -> int:
        return int(np.ceil(self.warmup_frac * self.epochs))


@dataclass
class TrainResult:
    model: TextDetector
    history: list[dict]
    final_eval: EvalResult
    best_f: float
    checkpoint_path: Path | None


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _images_tensor(samples: list[AnnotatedSample]) -> torch.Tensor:
    arr = np.stack([s.image.values for s in samples]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


def _gt_tensors(bundles: list[GroundTruthBundle]) -> dict[str, torch.Tensor]:
    def stack(maps):
        return torch.from_numpy(np.stack(maps).astype(np.float32))

    return {
        "cls": stack([b.cls for b in bundles]),
        "dist": stack([b.dist for b in bundles]),
        "dir": stack([np.moveaxis(b.dir, -1, 0) for b in bundles]),
        "segment_size": stack([b.segment_size for b in bundles]),
    }


def _gt_prior_tensor(bundle: GroundTruthBundle) -> torch.Tensor:
    arr = np.stack([bundle.cls, bundle.dist, bundle.dir[..., 0], bundle.dir[..., 1]])
    return torch.from_numpy(arr.astype(np.float32))


def _target_rings(sample: AnnotatedSample, bundle: GroundTruthBundle, n: int) -> dict[int, np.ndarray]:
    """Resampled ground-truth rings for instances that own pixels."""
    present = set(np.unique(bundle.instance_id)) if bundle.instance_id is not None else set()
    rings = {}
    for k, inst in enumerate(sample.instances):
        if inst.ignore or k not in present:
            continue
        rings[k] = resample_uniform(inst.boundary, n).points
    return rings


def _warmup_rings(
    bundle: GroundTruthBundle, pcfg: ProposalConfig, keys: set[int]
) -> dict[int, np.ndarray]:
    """Initial rings traced from the ground-truth distance field."""
    rings = {}
    for k in sorted(keys):
        mask = (bundle.instance_id == k) & (bundle.dist > pcfg.th_d)
        if int(mask.sum()) < max(pcfg.min_area, 1):
            continue
        ring = mask_to_contour(mask, pcfg.n_control)
        if ring is not None:
            rings[k] = ring.points
    return rings


def _assign_instance(prop_pts: np.ndarray, instance_id: np.ndarray) -> int | None:
    """Instance whose pixels a proposal covers most, by rasterized overlap."""
    h, w = instance_id.shape
    x0 = max(int(np.floor(prop_pts[:, 0].min())), 0)
    x1 = min(int(np.ceil(prop_pts[:, 0].max())), w - 1)
    y0 = max(int(np.floor(prop_pts[:, 1].min())), 0)
    y1 = min(int(np.ceil(prop_pts[:, 1].max())), h - 1)
    if x1 < x0 or y1 < y0:
        return None
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    pts = np.column_stack([gx.ravel(), gy.ravel()]).astype(float)
    inside = points_in_polygon(pts, prop_pts)
    ids = instance_id[y0 : y1 + 1, x0 : x1 + 1].ravel()[inside]
    ids = ids[ids >= 0]
    if len(ids) == 0:
        return None
    return int(np.bincount(ids).argmax())


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_step)


def _validate(
    model: TextDetector,
    samples: list[AnnotatedSample],
    pcfg: ProposalConfig,
    ecfg: EvalConfig,
    batch_size: int,
) -> EvalResult:
    model.eval()
    detections = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        detections.extend(model.detect(_images_tensor(chunk), pcfg))
    model.train()
    gt_polys = [[inst.boundary.points for inst in s.instances] for s in samples]
    gt_ignore = [[inst.ignore for inst in s.instances] for s in samples]
    return evaluate(detections, gt_polys, gt_ignore, ecfg)


def train(
    train_samples: list[AnnotatedSample],
    val_samples: list[AnnotatedSample],
    cfg: TrainConfig,
    resume_path: str | Path | None = None,
) -> TrainResult:
    """Fit a detector; returns the model, per-epoch history, and final metrics."""
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.model, cfg.seed)
    model.train()
    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    start_epoch = 0
    if resume_path is not None:
        manifest = checkpoint_load(resume_path, model, optim, cfg.model)
        start_epoch = int(manifest["epoch"]) + 1

    n_iters = cfg.model.n_iters
    history: list[dict] = []
    best_f = 0.0
    ckpt_path = out_dir / "checkpoint.bin" if out_dir else None
    last_eval: EvalResult | None = None

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        lr = _epoch_lr(cfg, epoch)
        for group in optim.param_groups:
            group["lr"] = lr
        order = _rng(cfg.seed, epoch, 0xA11CE).permutation(len(train_samples))
        warm = epoch < cfg.warmup_epochs
        sums = {"total": 0.0, "cls": 0.0, "dist": 0.0, "dir": 0.0, "boundary": 0.0}
        n_batches = 0

        for b0 in range(0, len(order), cfg.batch_size):
            idxs = order[b0 : b0 + cfg.batch_size]
            samples = []
            for idx in idxs:
                s = train_samples[int(idx)]
                if cfg.augment_enabled:
                    s = augment(s, cfg.augment, _rng(cfg.seed, epoch, int(idx)))
                samples.append(s)
            bundles = [compute_ground_truth(s) for s in samples]
            images = _images_tensor(samples)
            out = model(images)
            gt = _gt_tensors(bundles)

            boundary: list[list[tuple[torch.Tensor, torch.Tensor]]] = [
                [] for _ in range(n_iters)
            ]
            priors_np = out["priors"].detach().numpy()
            for b, (sample, bundle) in enumerate(zip(samples, bundles)):
                targets = _target_rings(sample, bundle, cfg.model.n_control)
                if not targets:
                    continue
                if warm:
                    init_rings = _warmup_rings(bundle, cfg.proposal, set(targets))
                    matched = sorted(init_rings)
                    inits = [init_rings[k] for k in matched]
                    priors_b = _gt_prior_tensor(bundle)
                else:
                    maps = FieldMaps(
                        cls=priors_np[b, 0],
                        dist=priors_np[b, 1],
                        dir=np.moveaxis(priors_np[b, 2:4], 0, -1),
                    )
                    props = filter_by_confidence(
                        extract_candidates(maps, cfg.proposal), cfg.proposal
                    )
                    matched, inits = [], []
                    for prop in props:
                        k = _assign_instance(prop.contour.points, bundle.instance_id)
                        if k is not None and k in targets:
                            matched.append(k)
                            inits.append(prop.contour.points)
                    priors_b = out["priors"][b]
                if not matched:
                    continue
                stack = model.deform_stack(
                    out["features"][b : b + 1], priors_b.unsqueeze(0)
                )[0]
                init = torch.from_numpy(np.stack(inits).astype(np.float32))
                iterates = model.deform.iterate(stack, init, n_iters)
                ring_targets = [
                    torch.from_numpy(targets[k].astype(np.float32)) for k in matched
                ]
                for i, its in enumerate(iterates):
                    for m, tgt in enumerate(ring_targets):
                        boundary[i].append((its[m], tgt))

            losses = total_loss(
                out["logits"], gt, boundary, cfg.loss, epoch=epoch + 1, max_epochs=cfg.epochs
            )
            optim.zero_grad()
            losses["total"].backward()
            if not torch.isfinite(losses["total"]):
                _dump_diagnostic(out_dir, epoch, b0 // cfg.batch_size, losses, lr)
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size}"
                )
            optim.step()
            for key in sums:
                sums[key] += float(losses[key].detach())
            n_batches += 1

        row = {
            "epoch": epoch,
            "lr": lr,
            "warmup": int(warm),
            "seconds": round(time.perf_counter() - t0, 3),
        }
        for key in sums:
            row[f"loss_{key}"] = sums[key] / max(n_batches, 1)
        should_eval = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if should_eval and val_samples:
            last_eval = _validate(
                model, val_samples, cfg.proposal, cfg.eval_cfg, cfg.batch_size
            )
            row.update(
                val_precision=last_eval.precision,
                val_recall=last_eval.recall,
                val_f=last_eval.f_measure,
            )
            best_f = max(best_f, last_eval.f_measure)
        history.append(row)
        if out_dir:
            _write_history(out_dir / "train_log.csv", history)
            checkpoint_save(ckpt_path, model, optim, epoch, cfg.model, extra={"lr": lr})
        if (
            cfg.early_stop_f > 0
            and last_eval is not None
            and last_eval.f_measure >= cfg.early_stop_f
        ):
            break
        # interruption point for staged budgets; the checkpoint above
        # already holds this epoch, so a resume continues at epoch + 1
        if cfg.stop_after_epoch is not None and epoch >= cfg.stop_after_epoch:
            break

    if last_eval is None:
        last_eval = (
            _validate(model, val_samples, cfg.proposal, cfg.eval_cfg, cfg.batch_size)
            if val_samples
            else EvalResult(1.0, 1.0, 0.0, 0, 0, 0)
        )
        best_f = max(best_f, last_eval.f_measure)
    model.eval()
    return TrainResult(
        model=model,
        history=history,
        final_eval=last_eval,
        best_f=best_f,
        checkpoint_path=ckpt_path,
    )


def _dump_diagnostic(out_dir: Path | None, epoch: int, batch: int, losses: dict, lr: float) -> None:
    info = {
        "epoch": epoch,
        "batch": batch,
        "lr": lr,
        "losses": {k: float(v) for k, v in losses.items()},
    }
    if out_dir:
        (out_dir / "diagnostic.json").write_text(json.dumps(info, indent=2))


def _write_history(path: Path, history: list[dict]) -> None:
    import csv

    fields = sorted({key for row in history for key in row}, key=lambda k: (k != "epoch", k))
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(history)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# checkpoints


def _config_hash(model_cfg: ModelConfig) -> str:
    blob = json.dumps(asdict(model_cfg), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


def checkpoint_save(
    path: str | Path,
    model: TextDetector,
    optim: torch.optim.Optimizer | None = None,
    epoch: int = 0,
    model_cfg: ModelConfig | None = None,
    extra: dict | None = None,
) -> None:
    """Write a flat binary checkpoint: magic, JSON manifest, raw arrays.

    The manifest records every array's dtype, shape, and byte offset, the
    epoch, and a hash of the model config so mismatched architectures are
    rejected at load time. Optimizer state (step, exp_avg, exp_avg_sq per
    parameter) rides along when an optimizer is given.
    """
    arrays: list[tuple[str, np.ndarray]] = []
    for name, tensor in model.state_dict().items():
        arrays.append((f"model.{name}", tensor.detach().cpu().numpy()))
    if optim is not None:
        for pid, param in enumerate(model.parameters()):
            state = optim.state.get(param, {})
            for key, value in state.items():
                arr = (
                    value.detach().cpu().numpy()
                    if torch.is_tensor(value)
                    else np.asarray(value, dtype=np.float64)
                )
                arrays.append((f"optim.{pid}.{key}", arr))

    table = []
    blobs = []
    offset = 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr).tobytes()
        table.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "config_hash": _config_hash(model_cfg or model.cfg),
        "epoch": int(epoch),
        "arrays": table,
        "extra": extra or {},
    }
    mjson = json.dumps(manifest).encode()
    payload = _MAGIC + struct.pack("<Q", len(mjson)) + mjson + b"".join(blobs)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def checkpoint_load(
    path: str | Path,
    model: TextDetector | None = None,
    optim: torch.optim.Optimizer | None = None,
    model_cfg: ModelConfig | None = None,
) -> dict:
    """Restore a checkpoint written by :func:`checkpoint_save`.

    Returns the manifest. Raises CheckpointError on a bad magic, a
    truncated file, or a config hash that does not match ``model_cfg``.
    """
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) + 8 or data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    mlen = struct.unpack("<Q", data[len(_MAGIC) : len(_MAGIC) + 8])[0]
    head = len(_MAGIC) + 8
    if len(data) < head + mlen:
        raise CheckpointError(f"{path} is truncated (manifest)")
    try:
        manifest = json.loads(data[head : head + mlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path} has an unreadable manifest: {exc}") from exc
    body = data[head + mlen :]
    total = sum(entry["nbytes"] for entry in manifest["arrays"])
    if len(body) < total:
        raise CheckpointError(f"{path} is truncated (arrays)")
    if model_cfg is not None and manifest["config_hash"] != _config_hash(model_cfg):
        raise CheckpointError(
            "checkpoint was written for a different model configuration"
        )

    loaded: dict[str, np.ndarray] = {}
    for entry in manifest["arrays"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        loaded[entry["name"]] = arr.copy()

    if model is not None:
        state = {
            name[len("model.") :]: torch.from_numpy(arr)
            for name, arr in loaded.items()
            if name.startswith("model.")
        }
        model.load_state_dict(state, strict=True)
    if optim is not None:
        if model is None:
            raise CheckpointError("restoring optimizer state requires the model")
        params = list(model.parameters())
        for name, arr in loaded.items():
            if not name.startswith("optim."):
                continue
            _, pid, key = name.split(".", 2)
            param = params[int(pid)]
            optim.state.setdefault(param, {})[key] = torch.from_numpy(arr)
    return manifest
