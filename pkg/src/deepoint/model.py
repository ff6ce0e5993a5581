"""Two-stage transformer: per-frame joint encoder, temporal encoder over a
causal window of frame embeddings, and an MLP head emitting the pointing
probability and a unit 3D direction in camera coordinates.

Attention masking uses ``-inf`` logits, so masked keys get weight exactly
zero and outputs are bitwise independent of masked token contents.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import torch
from torch import nn

from .errors import EmptyWindow
from .skeleton import NUM_JOINTS, body_part_joints
from .tokenizer import (
    BODY_CONTEXT_DIM,
    DESCRIPTOR_DIM,
    IMAGE_CONTEXT_DIM,
    VARIANTS,
    FeatureConfig,
    FrameTokens,
    RasterFeatures,
    TokenEmbedding,
)

ZERO_DIRECTION_EPS = 1e-12
FALLBACK_AXIS = (0.0, 0.0, 1.0)

# Appendix-style named masking ablations
BODY_PART_SETS = {
    "hand": ("left_hand", "right_hand"),
    "hand_head": ("left_hand", "right_hand", "head"),
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``window`` is N. With ``exclusive_past`` the temporal encoder sees N past
    frames plus the current one (N + 1 tokens); by default it sees N frames
    including the current one.
    """

    embed_dim: int = 32
    joint_layers: int = 2
    temporal_layers: int = 2
    heads: int = 4
    window: int = 5
    variant: str = "DP"
    ablation: str = "none"
    ffn_mult: float = 5.0
    exclusive_past: bool = False
    feature_mode: str = "oracle"
    backbone_channels: int = 256

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.window < 1 or self.joint_layers < 1 or self.temporal_layers < 1:
            raise ValueError("window and layer counts must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        parse_ablation(self.ablation)

    @property
    def tokens_per_window(self) -> int:
        return self.window + 1 if self.exclusive_past else self.window

    @property
    def ffn_dim(self) -> int:
        return int(round(self.ffn_mult * self.embed_dim))

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(mode=self.feature_mode, embed_dim=self.embed_dim,
                             backbone_channels=self.backbone_channels)

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        base = dict(embed_dim=192, joint_layers=6, temporal_layers=6, heads=8, window=15)
        base.update(kw)
        return cls(**base)

    @classmethod
    def toy(cls, **kw) -> "ModelConfig":
        base = dict(embed_dim=32, joint_layers=2, temporal_layers=2, heads=4, window=5)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def parse_ablation(ablation: str):
    """``("none", None)``, ``("no_temporal_encoder", None)`` or
    ``("body_part_mask", joint_indices)``."""
    if ablation in ("none", "", None):
        return "none", None
    if ablation == "no_temporal_encoder":
        return ablation, None
    if ablation.startswith("body_part_mask:"):
        names = [p.strip() for p in ablation.split(":", 1)[1].replace("{", "").replace("}", "").split(",") if p.strip()]
        expanded = []
        for n in names:
            expanded.extend(BODY_PART_SETS.get(n, (n,)))
        return "body_part_mask", body_part_joints(expanded)
    raise ValueError(f"unknown ablation {ablation!r}")


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, key_mask=None):
        """``key_mask`` (B, L) True for keys that may be attended."""
        B, L, D = x.shape
        h = self.heads
        q, k, v = self.qkv(x).reshape(B, L, 3, h, D // h).permute(2, 0, 3, 1, 4)
        logits = q @ k.transpose(-1, -2) / math.sqrt(D // h)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        w = logits.softmax(dim=-1)
        y = (w @ v).transpose(1, 2).reshape(B, L, D)
        return self.out(y)


class EncoderLayer(nn.Module):
    """Pre-norm attention + feed-forward block."""

    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))

    def forward(self, x, key_mask=None):
        x = x + self.attn(self.norm1(x), key_mask)
        return x + self.ffn(self.norm2(x))


class Encoder(nn.Module):
    def __init__(self, dim, heads, ffn_dim, layers):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(dim, heads, ffn_dim) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)

    def forward(self, x, key_mask=None):
        for layer in self.layers:
            x = layer(x, key_mask)
        return self.norm(x)


class JointEncoder(nn.Module):
    """Self-attention over [class, joint_0 .. joint_16]; returns the class output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.class_token = nn.Parameter(torch.randn(cfg.embed_dim) * 0.02)
        self.encoder = Encoder(cfg.embed_dim, cfg.heads, cfg.ffn_dim, cfg.joint_layers)

    def forward(self, ft: FrameTokens):
        lead = ft.tokens.shape[:-2]
        tok = ft.tokens.reshape(-1, NUM_JOINTS, ft.tokens.shape[-1])
        mask = ft.mask.reshape(-1, NUM_JOINTS)
        cls = (self.class_token + ft.class_extras.reshape(-1, tok.shape[-1]))[:, None]
        x = torch.cat([cls, tok], dim=1)
        key_mask = torch.cat([torch.ones_like(mask[:, :1]), mask], dim=1)
        out = self.encoder(x, key_mask)[:, 0]
        return out.reshape(*lead, -1)


class TemporalEncoder(nn.Module):
    """Self-attention over a window of frame embeddings ordered oldest -> current."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.position = nn.Parameter(torch.randn(cfg.tokens_per_window, cfg.embed_dim) * 0.02)
        self.encoder = Encoder(cfg.embed_dim, cfg.heads, cfg.ffn_dim, cfg.temporal_layers)

    def forward(self, seq, valid=None):
        """``seq`` (B, W, d); ``valid`` (B, W) False for padded slots."""
        if seq.shape[1] == 0:
            raise EmptyWindow("temporal window is empty")
        W = seq.shape[1]
        x = seq + self.position[-W:]
        if valid is not None:
            x = torch.where(valid[..., None], x, torch.zeros((), dtype=x.dtype))
            # the current slot stays attendable so no query row is fully masked
            valid = valid.clone()
            valid[:, -1] = True
        return self.encoder(x, valid)[:, -1]


class TemporalMLP(nn.Module):
    """Ablation replacing the temporal encoder: concatenated window -> MLP.

    Widths follow (W*d, 5d, 5d, d), i.e. (2880, 960, 960, 192) at d=192, W=15.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        sizes = (cfg.tokens_per_window * d, 5 * d, 5 * d, d)
        layers = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            layers += [nn.Linear(a, b), nn.GELU()]
        self.net = nn.Sequential(*layers[:-1])
        self.sizes = sizes

    def forward(self, seq, valid=None):
        if seq.shape[1] == 0:
            raise EmptyWindow("temporal window is empty")
        if valid is not None:
            seq = torch.where(valid[..., None], seq, torch.zeros((), dtype=seq.dtype))
        return self.net(seq.reshape(seq.shape[0], -1))


@dataclass
class PointingOutput:
    """Batched predictions. ``p`` (B,), ``nu`` (B, 3), ``logits`` (B, 2) with
    the pointing class first, ``raw_direction`` (B, 3), ``zero_direction``
    (B,) flags rows that used the fallback axis."""

    p: torch.Tensor
    nu: torch.Tensor
    logits: torch.Tensor
    raw_direction: torch.Tensor
    zero_direction: torch.Tensor


def pointing_probability(logits):
    return logits.softmax(dim=-1)[..., 0]


def normalize_direction(raw):
    n = raw.norm(dim=-1, keepdim=True)
    zero = n[..., 0] < ZERO_DIRECTION_EPS
    fallback = torch.tensor(FALLBACK_AXIS, dtype=raw.dtype, device=raw.device)
    nu = torch.where(zero[..., None], fallback, raw / torch.where(zero[..., None], torch.ones_like(n), n))
    return nu, zero


class Head(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.cls = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 2))
        self.dir = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 3))

    def forward(self, e) -> PointingOutput:
        logits = self.cls(e)
        raw = self.dir(e)
        nu, zero = normalize_direction(raw)
        return PointingOutput(pointing_probability(logits), nu, logits, raw, zero)


class DeePointNet(nn.Module):
    """Full network. Input is a batch dict (see :mod:`deepoint.windows`):

    ``desc`` (B, W, 17, F) raw joint features (oracle mode) or ``crop``
    (B, W, 1, S, S) + ``joint_xy`` + ``joint_box`` (raster mode);
    ``relpos`` (B, W, 17, 2); ``mask`` (B, W, 17); ``valid`` (B, W);
    optional ``body`` / ``image`` context.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        fc = cfg.feature_config
        self.raster = RasterFeatures(fc) if fc.mode == "raster" else None
        if fc.mode == "raster":
            self.embed = TokenEmbedding(fc.raw_dim, cfg.embed_dim, cfg.variant, shared_context_projection=True)
        else:
            self.embed = TokenEmbedding(DESCRIPTOR_DIM, cfg.embed_dim, cfg.variant, BODY_CONTEXT_DIM, IMAGE_CONTEXT_DIM)
        self.joint_encoder = JointEncoder(cfg)
        kind, joints = parse_ablation(cfg.ablation)
        self.temporal = TemporalMLP(cfg) if kind == "no_temporal_encoder" else TemporalEncoder(cfg)
        allowed = torch.zeros(NUM_JOINTS, dtype=torch.bool)
        if joints is None:
            allowed[:] = True
        else:
            allowed[list(joints)] = True
        self.register_buffer("allowed_joints", allowed, persistent=False)
        self.head = Head(cfg.embed_dim)

    def frame_tokens(self, batch) -> FrameTokens:
        mask = batch["mask"] & self.allowed_joints
        if self.raster is not None:
            B, W = mask.shape[:2]
            crops = batch["crop"].reshape(B * W, *batch["crop"].shape[2:])
            image = batch.get("image")
            if image is not None:
                image = image.reshape(B * W, *image.shape[2:])
            raw, body, img = self.raster(crops, batch["joint_xy"].reshape(B * W, NUM_JOINTS, 2),
                                         batch["joint_box"].reshape(B * W), image)
            raw = raw.reshape(B, W, NUM_JOINTS, -1)
            body = body.reshape(B, W, -1)
            img = img.reshape(B, W, -1) if img is not None else None
        else:
            raw, body, img = batch["desc"], batch.get("body"), batch.get("image")
        ft = self.embed(raw, batch["relpos"], mask, body, img)
        return ft

    def encode_frames(self, batch):
        return self.joint_encoder(self.frame_tokens(batch))

    def forward(self, batch) -> PointingOutput:
        e = self.encode_frames(batch)
        valid = batch.get("valid")
        return self.head(self.temporal(e, valid))


def count_parameters(cfg_or_module) -> dict[str, int]:
    """Exact learnable-parameter counts per component and in total."""
    net = cfg_or_module if isinstance(cfg_or_module, nn.Module) else DeePointNet(cfg_or_module)

    def n(m):
        return sum(p.numel() for p in m.parameters() if p.requires_grad)

    out = {
        "embedding": n(net.embed) + (n(net.raster) if net.raster is not None else 0),
        "joint_encoder": n(net.joint_encoder),
        "temporal": n(net.temporal),
        "head": n(net.head),
    }
    out["total"] = n(net)
    return out


def encoder_parameter_formula(d: int, layers: int, ffn: int) -> int:
    """Closed form for :class:`Encoder`: per layer 2 LayerNorms (4d), QKV
    (3d^2 + 3d), output (d^2 + d), FFN (2 d f + f + d); plus final norm 2d."""
    per_layer = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (2 * d * ffn + ffn + d)
    return layers * per_layer + 2 * d
