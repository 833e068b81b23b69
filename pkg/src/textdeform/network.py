"""Backbone, prior-map head, and iterative boundary deformation.

The backbone turns an image into a shared feature map F_s. A small head
regresses four prior maps from it: text probability, normalized boundary
distance, and a 2-channel direction field. Control points of a coarse
boundary proposal are then refined iteratively: each point samples the
concatenated (F_s, priors) stack bilinearly, a sequence encoder mixes
information along the ring of points, and a per-point decoder emits x/y
offsets. The encoder comes in five flavors (``fc``, ``rnn``,
``circular_conv``, ``gcn``, ``adaptive``); the adaptive one concatenates
a bidirectional LSTM, a four-layer graph-convolution stack over the
two-hop ring graph, and a per-point linear projection.

GroupNorm is used throughout instead of BatchNorm: no running statistics
means bitwise-identical behavior between train and eval modes, which the
finite-difference gradient checks and checkpoint-resume guarantees rely
on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

ENCODER_NAMES = ("fc", "rnn", "circular_conv", "gcn", "adaptive")

# channel layout of the prior stack
PRIOR_CHANNELS = {"cls": (0,), "dist": (1,), "dir": (2, 3)}


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    base_channels: int = 16
    feature_channels: int = 32
    stride: int = 1
    n_control: int = 20
    n_iters: int = 3
    encoder: str = "adaptive"
    hidden: int = 128
    decoder_hidden: tuple[int, int] = (128, 64)
    prior_mask: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.encoder not in ENCODER_NAMES:
            raise ConfigError(f"unknown encoder {self.encoder!r}; choose from {ENCODER_NAMES}")
        if self.stride not in (1, 2, 4):
            raise ConfigError(f"stride must be 1, 2, or 4, got {self.stride}")
        if self.n_control < 3:
            raise ConfigError(f"n_control must be >= 3, got {self.n_control}")
        if self.n_iters < 1:
            raise ConfigError(f"n_iters must be >= 1, got {self.n_iters}")
        bad = [m for m in self.prior_mask if m not in PRIOR_CHANNELS]
        if bad:
            raise ConfigError(f"unknown prior channels {bad}; choose from {list(PRIOR_CHANNELS)}")
        for name in ("in_channels", "base_channels", "feature_channels", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def point_feature_dim(self) -> int:
        """Columns of the per-point feature matrix: F_s channels plus 4 priors."""
        return self.feature_channels + 4


def build_propagation_matrix(n: int) -> np.ndarray:
    """Symmetric-normalized adjacency of the two-hop ring over ``n`` nodes.

    Nodes i and j are adjacent when they are 1 or 2 steps apart on the
    ring; self-loops are added before normalization:
    G = D^{-1/2} (A + I) D^{-1/2}.
    """
    if n < 3:
        raise ConfigError(f"propagation matrix needs n >= 3, got {n}")
    a = np.zeros((n, n))
    for off in (1, 2, n - 1, n - 2):
        idx = np.arange(n)
        a[idx, (idx + off) % n] = 1.0
    a_tilde = a + np.eye(n)
    deg = a_tilde.sum(axis=1)
    return a_tilde / np.sqrt(np.outer(deg, deg))


def gcn_layer(
    x: torch.Tensor, g: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None
) -> torch.Tensor:
    """One graph-convolution step: ReLU((X concat GX) W + b).

    ``x`` is (M, N, F), ``g`` (N, N), ``weight`` (2F, F_out).
    """
    gx = torch.einsum("ij,mjf->mif", g, x)
    h = torch.cat([x, gx], dim=-1) @ weight
    if bias is not None:
        h = h + bias
    return torch.relu(h)


class GraphConvLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.linear = nn.Linear(2 * in_dim, out_dim)

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        return gcn_layer(x, g, self.linear.weight.T, self.linear.bias)


def torch_bilinear(fmap: torch.Tensor, pts: torch.Tensor) -> torch.Tensor:
    """Differentiable bilinear sampling of a (C, H, W) map at (..., 2) points.

    Matches the numpy sampler: base indices are clamped to the last valid
    cell, so coordinates outside the grid extrapolate linearly. Gradients
    flow to both the map and the points.
    """
    c, h, w = fmap.shape
    x, y = pts[..., 0], pts[..., 1]
    x0 = torch.clamp(torch.floor(x), 0.0, float(w - 2))
    y0 = torch.clamp(torch.floor(y), 0.0, float(h - 2))
    wx, wy = x - x0, y - y0
    base = (y0.long() * w + x0.long()).reshape(-1)
    flat = fmap.reshape(c, h * w)

    def corner(offset: int) -> torch.Tensor:
        return flat[:, base + offset].T.reshape(*pts.shape[:-1], c)

    v00, v01 = corner(0), corner(1)
    v10, v11 = corner(w), corner(w + 1)
    wx, wy = wx.unsqueeze(-1), wy.unsqueeze(-1)
    return (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )


def _norm(channels: int) -> nn.GroupNorm:
    groups = 4 if channels % 4 == 0 else 1
    return nn.GroupNorm(groups, channels)


def _conv_block(cin: int, cout: int, stride: int = 1, dilation: int = 1) -> list[nn.Module]:
    return [
        nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation),
        _norm(cout),
        nn.ReLU(inplace=True),
    ]


class Backbone(nn.Module):
    """Small dilated conv net producing the shared feature map F_s."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.base_channels
        layers = _conv_block(cfg.in_channels, c)
        s = cfg.stride
        while s > 1:
            layers += _conv_block(c, c, stride=2)
            s //= 2
        layers += _conv_block(c, c)
        layers += _conv_block(c, cfg.feature_channels)
        layers += _conv_block(cfg.feature_channels, cfg.feature_channels, dilation=2)
        layers += _conv_block(cfg.feature_channels, cfg.feature_channels, dilation=4)
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class PriorHead(nn.Module):
    """Regresses the 4 prior-map logits (cls, dist, dir_x, dir_y) from F_s."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cfg.feature_channels, cfg.base_channels, 3, padding=1),
            _norm(cfg.base_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(cfg.base_channels, 4, 1),
        )

    def forward(self, fs: torch.Tensor) -> torch.Tensor:
        return self.net(fs)


def prior_maps(logits: torch.Tensor) -> torch.Tensor:
    """Squash head logits into fields: sigmoid cls/dist, tanh direction."""
    return torch.cat(
        [torch.sigmoid(logits[:, 0:2]), torch.tanh(logits[:, 2:4])], dim=1
    )


def prior_mask_vector(mask_names: tuple[str, ...]) -> torch.Tensor:
    """(4,) multiplier that zeroes the named channels of the prior stack."""
    vec = torch.ones(4)
    for name in mask_names:
        for ch in PRIOR_CHANNELS[name]:
            vec[ch] = 0.0
    return vec


class _FCEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, hidden),
            nn.ReLU(inplace=True),
        )
        self.out_dim = hidden

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class _RNNEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, hidden, batch_first=True, bidirectional=True)
        self.out_dim = 2 * hidden

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        out, _ = self.lstm(x)
        return out


class _CircConvEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, kernel: int = 3):
        super().__init__()
        self.conv1 = nn.Conv1d(in_dim, hidden, kernel, padding=0)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel, padding=0)
        self.pad = kernel // 2
        self.out_dim = hidden

    def _circ(self, x: torch.Tensor, conv: nn.Conv1d) -> torch.Tensor:
        x = torch.cat([x[..., -self.pad:], x, x[..., : self.pad]], dim=-1)
        return torch.relu(conv(x))

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        h = x.transpose(1, 2)
        h = self._circ(h, self.conv1)
        h = self._circ(h, self.conv2)
        return h.transpose(1, 2)


class _GCNEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, depth: int = 4):
        super().__init__()
        dims = [in_dim] + [hidden] * depth
        self.layers = nn.ModuleList(
            GraphConvLayer(a, b) for a, b in zip(dims[:-1], dims[1:])
        )
        self.out_dim = hidden

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, g)
        return x


class _AdaptiveEncoder(nn.Module):
    """Concatenation of BLSTM, GCN stack, and per-point projection."""

    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.rnn = _RNNEncoder(in_dim, hidden)
        self.gcn = _GCNEncoder(in_dim, hidden)
        self.proj = nn.Linear(in_dim, hidden)
        self.out_dim = self.rnn.out_dim + 2 * hidden

    def forward(self, x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        return torch.cat(
            [self.rnn(x, g), self.gcn(x, g), torch.relu(self.proj(x))], dim=-1
        )


_ENCODERS = {
    "fc": _FCEncoder,
    "rnn": _RNNEncoder,
    "circular_conv": _CircConvEncoder,
    "gcn": _GCNEncoder,
    "adaptive": _AdaptiveEncoder,
}


class OffsetDecoder(nn.Module):
    """Per-point offset head: three 1x1 stages, the last zero-initialized."""

    def __init__(self, in_dim: int, hidden: tuple[int, int] = (128, 64)):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden[0])
        self.fc2 = nn.Linear(hidden[0], hidden[1])
        self.fc3 = nn.Linear(hidden[1], 2)
        nn.init.zeros_(self.fc3.weight)
        nn.init.zeros_(self.fc3.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.fc1(x))
        h = torch.relu(self.fc2(h))
        return self.fc3(h)


class DeformationModel(nn.Module):
    """Shared-weight iterative refinement of control-point rings."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc_cls = _ENCODERS[cfg.encoder]
        self.encoder = enc_cls(cfg.point_feature_dim, cfg.hidden)
        self.decoder = OffsetDecoder(self.encoder.out_dim, cfg.decoder_hidden)
        g = build_propagation_matrix(cfg.n_control)
        self.register_buffer("g", torch.as_tensor(g, dtype=torch.float32))

    def iterate(
        self, stack: torch.Tensor, pts: torch.Tensor, n_iters: int | None = None
    ) -> list[torch.Tensor]:
        """Refine (M, N, 2) control points on a (C, h, w) feature stack.

        Returns the point set after every iteration; gradients flow through
        the moving sample positions across iterations.
        """
        k = n_iters if n_iters is not None else self.cfg.n_iters
        if pts.shape[0] == 0:
            return [pts] * k
        out = []
        cur = pts
        for _ in range(k):
            feats = torch_bilinear(stack, cur)
            emb = self.encoder(feats, self.g)
            cur = cur + self.decoder(emb)
            out.append(cur)
        return out


@dataclass(frozen=True)
class Detection:
    """One detected region: ring coordinates after each refinement step.

    ``contours[0]`` is the coarse proposal, later entries one per
    iteration, all in input-image coordinates. ``contours[-1]`` is the
    final boundary.
    """

    contours: list[np.ndarray]
    confidence: float

    @property
    def polygon(self) -> np.ndarray:
        return self.contours[-1]


class TextDetector(nn.Module):
    """Full pipeline: backbone, prior head, proposal extraction, deformation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.head = PriorHead(cfg)
        self.deform = DeformationModel(cfg)
        self.register_buffer("prior_mask_vec", prior_mask_vector(cfg.prior_mask))

    def forward(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        fs = self.backbone(images)
        logits = self.head(fs)
        return {"features": fs, "logits": logits, "priors": prior_maps(logits)}

    def deform_stack(self, features: torch.Tensor, priors: torch.Tensor) -> torch.Tensor:
        """Concatenate F_s with (optionally masked) prior maps, (B, C+4, h, w)."""
        masked = priors * self.prior_mask_vec.view(1, 4, 1, 1)
        return torch.cat([features, masked], dim=1)

    def map_to_image(self, pts: np.ndarray) -> np.ndarray:
        """Feature-map coordinates to image pixels (cell-center convention)."""
        s = self.cfg.stride
        return pts * s + (s - 1) / 2.0

    def image_to_map(self, pts: np.ndarray) -> np.ndarray:
        s = self.cfg.stride
        return (pts - (s - 1) / 2.0) / s

    @torch.no_grad()
    def detect(self, images: torch.Tensor, proposal_cfg=None) -> list[list[Detection]]:
        """Run the full pipeline on a (B, C, H, W) batch.

        Returns one Detection list per image, contours in image pixels.
        """
        from .proposals import FieldMaps, ProposalConfig, extract_candidates, filter_by_confidence

        pcfg = proposal_cfg or ProposalConfig(n_control=self.cfg.n_control)
        if pcfg.n_control != self.cfg.n_control:
            raise ConfigError(
                f"proposal n_control {pcfg.n_control} != model n_control {self.cfg.n_control}"
            )
        out = self.forward(images)
        stacks = self.deform_stack(out["features"], out["priors"])
        priors = out["priors"].cpu().numpy()
        results: list[list[Detection]] = []
        for b in range(images.shape[0]):
            maps = FieldMaps(
                cls=priors[b, 0], dist=priors[b, 1], dir=np.moveaxis(priors[b, 2:4], 0, -1)
            )
            props = filter_by_confidence(extract_candidates(maps, pcfg), pcfg)
            if not props:
                results.append([])
                continue
            init = torch.as_tensor(
                np.stack([p.contour.points for p in props]), dtype=stacks.dtype
            )
            iterates = self.deform.iterate(stacks[b], init, self.cfg.n_iters)
            rings = [init.cpu().numpy()] + [it.cpu().numpy() for it in iterates]
            dets = []
            for m, prop in enumerate(props):
                contours = [self.map_to_image(r[m]) for r in rings]
                dets.append(Detection(contours=contours, confidence=prop.confidence))
            results.append(dets)
        return results


def build_model(cfg: ModelConfig, seed: int = 0) -> TextDetector:
    """Deterministically initialized detector: same (cfg, seed), same weights."""
    torch.manual_seed(seed)
    return TextDetector(cfg)
