"""Training objectives for the prior maps and the boundary refinement.

Classification uses online hard example mining: all positives are kept
and the hardest negatives are added at a 3:1 negative-to-positive ratio
(or a fixed floor of 100 when the image holds no text). The distance
loss is a mean squared error over the same mined mask. The direction
loss combines a segment-size-weighted L2 norm over the whole map with a
cosine dissimilarity over text pixels. Boundary refinement is scored by
a shift-invariant matching loss, the minimum over all circular shifts of
a smooth-L1 sum, weighted down for later iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 3.0
    lam: float = 0.1
    ohem_ratio: int = 3
    ohem_min_neg: int = 100
    beta: float = 1.0
    dir_norm_eps: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.ohem_ratio < 1 or self.ohem_min_neg < 1:
            raise ConfigError("OHEM ratio and floor must be >= 1")
        if self.beta <= 0:
            raise ConfigError(f"smooth-L1 beta must be positive, got {self.beta}")


def ohem_select(
    loss_px: torch.Tensor,
    pos_mask: torch.Tensor,
    ratio: int = 3,
    min_neg: int = 100,
) -> torch.Tensor:
    """Hard-example mask: all positives plus the hardest negatives.

    Keeps min(ratio * #pos, #neg) negatives with the largest per-pixel
    loss; with no positives, keeps min(min_neg, #neg) instead.
    """
    pos = pos_mask.bool()
    neg = ~pos
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    k = min(ratio * n_pos, n_neg) if n_pos > 0 else min(min_neg, n_neg)
    keep = pos.clone()
    if k > 0:
        neg_losses = loss_px.masked_fill(pos, float("-inf"))
        idx = torch.topk(neg_losses.reshape(-1), k).indices
        keep.reshape(-1)[idx] = True
    return keep


def loss_cls(cls_logit: torch.Tensor, gt_cls: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over the mined pixel mask."""
    lp = F.binary_cross_entropy_with_logits(cls_logit, gt_cls, reduction="none")
    return lp[mask].mean()


def loss_dist(pred_dist: torch.Tensor, gt_dist: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error of the normalized distance field over ``mask``."""
    diff = pred_dist[mask] - gt_dist[mask]
    return (diff * diff).mean()


def loss_dir(
    pred_dir: torch.Tensor,
    gt_dir: torch.Tensor,
    gt_cls: torch.Tensor,
    segment_size: torch.Tensor,
    norm_eps: float = 1e-6,
) -> torch.Tensor:
    """Weighted L2 plus cosine dissimilarity of the direction field.

    ``pred_dir`` and ``gt_dir`` are (2, H, W). The L2 term sums
    w(p) * ||V - V_hat|| over the whole image domain with
    w(p) = 1/sqrt(|segment containing p|); the cosine term averages
    (1 - cos) over ground-truth text pixels, skipping pixels where either
    vector is shorter than ``norm_eps``.
    """
    w = 1.0 / torch.sqrt(segment_size.clamp_min(1.0))
    diff2 = ((pred_dir - gt_dir) ** 2).sum(dim=0)
    # clamp keeps the gradient finite at an exact zero without moving
    # any value a comparison at 1e-9 could see
    norm_term = (w * torch.sqrt(diff2.clamp_min(1e-24))).sum()

    text = gt_cls > 0.5
    n_text = int(text.sum())
    if n_text == 0:
        return norm_term
    pn = torch.sqrt((pred_dir**2).sum(dim=0).clamp_min(1e-24))
    gn = torch.sqrt((gt_dir**2).sum(dim=0).clamp_min(1e-24))
    valid = text & (pn > norm_eps) & (gn > norm_eps)
    if not bool(valid.any()):
        return norm_term
    cos = (pred_dir * gt_dir).sum(dim=0)[valid] / (pn[valid] * gn[valid])
    cos_term = (1.0 - cos).sum() / n_text
    return norm_term + cos_term


def matching_loss(pred: torch.Tensor, gt: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Shift-invariant ring distance: min over circular shifts of the
    per-coordinate smooth-L1 sum.

    Both rings are (N, 2) with matching orientation; the minimum runs
    over all N rotations of the ground truth.
    """
    n = pred.shape[0]
    if gt.shape != pred.shape:
        raise ValueError(f"ring shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    shifted = torch.stack([torch.roll(gt, s, dims=0) for s in range(n)])
    costs = F.smooth_l1_loss(
        pred.unsqueeze(0).expand_as(shifted), shifted, beta=beta, reduction="none"
    ).sum(dim=(1, 2))
    return costs.min()


def deformation_weight(i: int, eps: int, lam: float = 0.1) -> float:
    """Boundary-loss weight lam / (1 + exp((i - eps) / eps)).

    ``i`` is the current training epoch and ``eps`` the final one, so the
    weight decays strictly over training and equals lam/2 at i == eps.
    """
    if eps < 1:
        raise ConfigError(f"eps must be >= 1, got {eps}")
    return lam / (1.0 + math.exp((i - eps) / eps))


def total_loss(
    logits: torch.Tensor,
    gt: dict[str, torch.Tensor],
    boundary: list[list[tuple[torch.Tensor, torch.Tensor]]] | None,
    cfg: LossConfig,
    epoch: int = 1,
    max_epochs: int = 1,
) -> dict[str, torch.Tensor]:
    """Composite objective over a batch.

    ``logits`` is the (B, 4, h, w) head output; ``gt`` holds cls/dist
    (B, h, w), dir (B, 2, h, w), and segment_size (B, h, w) targets.
    ``boundary`` lists, per refinement iteration, the matched
    (predicted ring, target ring) pairs pooled over the batch; the
    boundary term is the mean per-pair matching loss averaged over
    iterations, weighted by the epoch-dependent decay. Returns each
    component plus their weighted total.
    """
    b = logits.shape[0]
    cls_logit = logits[:, 0]
    dist_pred = torch.sigmoid(logits[:, 1])
    dir_pred = torch.tanh(logits[:, 2:4])
    zero = logits.sum() * 0.0
    l_cls = zero.clone()
    l_dist = zero.clone()
    l_dir = zero.clone()
    for k in range(b):
        lp = F.binary_cross_entropy_with_logits(
            cls_logit[k], gt["cls"][k], reduction="none"
        )
        mask = ohem_select(
            lp.detach(), gt["cls"][k] > 0.5, ratio=cfg.ohem_ratio, min_neg=cfg.ohem_min_neg
        )
        l_cls = l_cls + lp[mask].mean()
        l_dist = l_dist + loss_dist(dist_pred[k], gt["dist"][k], mask)
        l_dir = l_dir + loss_dir(
            dir_pred[k], gt["dir"][k], gt["cls"][k], gt["segment_size"][k], cfg.dir_norm_eps
        )
    l_cls, l_dist, l_dir = l_cls / b, l_dist / b, l_dir / b

    l_bd = zero.clone()
    if boundary:
        for pairs in boundary:
            if not pairs:
                continue
            per_iter = torch.stack([matching_loss(p, g, cfg.beta) for p, g in pairs]).mean()
            l_bd = l_bd + per_iter
        l_bd = l_bd / len(boundary)

    w_bd = deformation_weight(epoch, max_epochs, cfg.lam)
    total = l_cls + cfg.alpha * l_dist + l_dir + w_bd * l_bd
    return {
        "cls": l_cls,
        "dist": l_dist,
        "dir": l_dir,
        "boundary": l_bd,
        "boundary_weight": zero + w_bd,
        "total": total,
    }
