"""Per-frame joint tokens for the joint encoder.

Two feature providers produce the raw per-joint visual feature:

* ``oracle``: a fixed 10-number descriptor computed from the pose track
  (layout in :data:`DESCRIPTOR_LAYOUT`);
* ``raster``: a stick figure rasterized at 256x256, passed through a small
  stride-8 conv backbone, and sampled with ROI align around each joint
  (3x3x256 per joint).

Raw features are linearly projected to ``embed_dim`` and summed with the
positional code ``joint_embedding[j] + linear(relpos)``. Joints whose
confidence is below :data:`UNDETECTED_CONFIDENCE` become all-zero rows with
``mask = False``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import UndetectedJoint
from .skeleton import ADJACENT, JOINT_INDEX, LIMBS, NUM_JOINTS

UNDETECTED_CONFIDENCE = 0.3
MIN_VISIBLE_JOINTS = 5

DESCRIPTOR_LAYOUT = (
    ("position", 2),  # (u / W, v / H) * 2 - 1
    ("velocity", 2),  # (kp[t] - kp[t-1]) / bbox height
    ("velocity_valid", 1),
    ("offset_a", 2),  # unit vector to the first skeleton neighbour
    ("offset_b", 2),  # unit vector to the second skeleton neighbour
    ("confidence", 1),
)
DESCRIPTOR_DIM = sum(n for _, n in DESCRIPTOR_LAYOUT)
BODY_CONTEXT_DIM = NUM_JOINTS * 3
IMAGE_CONTEXT_DIM = 4

VARIANTS = ("DP", "DP-B", "DP-BI")


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "oracle"
    embed_dim: int = 192
    joint_patch: int = 3
    context_patch: int = 16
    backbone_channels: int = 256
    joint_box_scale: float = 0.2
    raster_size: int = 256
    undetected_confidence: float = UNDETECTED_CONFIDENCE

    def __post_init__(self):
        if self.mode not in ("oracle", "raster"):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.embed_dim <= 0 or self.joint_patch <= 0 or self.context_patch <= 0:
            raise ValueError("embed_dim and patch sizes must be positive")

    @property
    def raw_dim(self) -> int:
        if self.mode == "oracle":
            return DESCRIPTOR_DIM
        return self.joint_patch * self.joint_patch * self.backbone_channels


# ---------------------------------------------------------------- numpy side


def joint_mask(confidence: np.ndarray, threshold: float = UNDETECTED_CONFIDENCE) -> np.ndarray:
    return confidence >= threshold


def relative_positions(keypoints: np.ndarray, mask: np.ndarray, bbox: np.ndarray) -> np.ndarray:
    """Keypoints relative to the shoulder midpoint, divided by bbox (w, h).

    Falls back to the bbox center as origin when either shoulder is
    undetected. Works on ``(..., 17, 2)`` with matching ``mask`` / ``bbox``.
    """
    ls, rs = JOINT_INDEX["left_shoulder"], JOINT_INDEX["right_shoulder"]
    mid = 0.5 * (keypoints[..., ls, :] + keypoints[..., rs, :])
    center = 0.5 * (bbox[..., :2] + bbox[..., 2:])
    have = mask[..., ls] & mask[..., rs]
    origin = np.where(have[..., None], mid, center)
    size = np.maximum(bbox[..., 2:] - bbox[..., :2], 1.0)
    rel = (keypoints - origin[..., None, :]) / size[..., None, :]
    return np.where(mask[..., None], rel, 0.0)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 1e-9, v / np.maximum(n, 1e-9), 0.0)


def track_features(track, threshold: float = UNDETECTED_CONFIDENCE) -> dict[str, np.ndarray]:
    """Vectorized oracle features for every frame of a :class:`PoseTrack`.

    Returns ``desc`` (T, 17, 10), ``relpos`` (T, 17, 2), ``mask`` (T, 17),
    ``body`` (T, 51), ``image`` (T, 4) and ``valid`` (T,) where ``valid``
    marks frames with at least :data:`MIN_VISIBLE_JOINTS` detected joints.
    """
    kp = np.asarray(track.keypoints, dtype=np.float64)
    conf = np.asarray(track.confidence, dtype=np.float64)
    bbox = np.asarray(track.bbox, dtype=np.float64)
    W, H = track.image_size
    T = kp.shape[0]
    mask = joint_mask(conf, threshold)

    pos = np.stack([kp[..., 0] / W, kp[..., 1] / H], axis=-1) * 2 - 1
    bh = np.maximum(bbox[:, 3] - bbox[:, 1], 1.0)
    vel = np.zeros_like(kp)
    vel_ok = np.zeros((T, NUM_JOINTS), dtype=bool)
    if T > 1:
        vel_ok[1:] = mask[1:] & mask[:-1]
        vel[1:] = (kp[1:] - kp[:-1]) / bh[1:, None, None]
    vel = np.where(vel_ok[..., None], vel, 0.0)
    a_idx = np.array([a for a, _ in ADJACENT])
    b_idx = np.array([b for _, b in ADJACENT])
    off_a = np.where((mask[:, a_idx] & mask)[..., None], _unit(kp[:, a_idx] - kp), 0.0)
    off_b = np.where((mask[:, b_idx] & mask)[..., None], _unit(kp[:, b_idx] - kp), 0.0)
    desc = np.concatenate([pos, vel, vel_ok[..., None].astype(np.float64), off_a, off_b, conf[..., None]], axis=-1)
    desc = np.where(mask[..., None], desc, 0.0)

    relpos = relative_positions(kp, mask, bbox)
    body = np.concatenate([relpos.reshape(T, -1), mask.astype(np.float64)], axis=-1)
    size = np.array([W, H, W, H], dtype=np.float64)
    image = bbox / size * 2 - 1
    valid = mask.sum(axis=1) >= MIN_VISIBLE_JOINTS
    return {"desc": desc, "relpos": relpos, "mask": mask, "body": body, "image": image, "valid": valid}


def oracle_descriptor(track, frame: int, joint: int, threshold: float = UNDETECTED_CONFIDENCE) -> np.ndarray:
    """Descriptor of one joint; see :data:`DESCRIPTOR_LAYOUT`."""
    if track.confidence[frame, joint] < threshold:
        raise UndetectedJoint(f"joint {joint} at frame {frame} has confidence {track.confidence[frame, joint]:.2f}")
    lo = max(0, frame - 1)
    sub = _SliceTrack(track, lo, frame + 1)
    return track_features(sub, threshold)["desc"][-1, joint]


class _SliceTrack:
    def __init__(self, track, lo, hi):
        self.keypoints = track.keypoints[lo:hi]
        self.confidence = track.confidence[lo:hi]
        self.bbox = track.bbox[lo:hi]
        self.image_size = track.image_size


# ---------------------------------------------------------------- raster side


def rasterize_stick_figure(keypoints, mask, region, size: int = 256, thickness: float = 2.5) -> np.ndarray:
    """Render limbs of detected joints inside ``region`` (x0, y0, x1, y1).

    The region is mapped to a ``size`` x ``size`` canvas (aspect preserved,
    centered). Returns ``(size, size)`` float32 in [0, 1].
    """
    x0, y0, x1, y1 = region
    scale = size / max(x1 - x0, y1 - y0, 1.0)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    pts = (np.asarray(keypoints) - [cx, cy]) * scale + size / 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    canvas = np.zeros((size, size), dtype=np.float32)
    for a, b in LIMBS:
        if not (mask[a] and mask[b]):
            continue
        pa, pb = pts[a], pts[b]
        d = pb - pa
        L2 = float(d @ d)
        if L2 < 1e-9:
            t = np.zeros_like(xx)
        else:
            t = np.clip(((xx - pa[0]) * d[0] + (yy - pa[1]) * d[1]) / L2, 0.0, 1.0)
        dist = np.hypot(xx - (pa[0] + t * d[0]), yy - (pa[1] + t * d[1]))
        canvas = np.maximum(canvas, np.clip(thickness + 0.5 - dist, 0.0, 1.0))
    return canvas.astype(np.float32)


def raster_coords(keypoints, region, size: int = 256) -> np.ndarray:
    x0, y0, x1, y1 = region
    scale = size / max(x1 - x0, y1 - y0, 1.0)
    return (np.asarray(keypoints) - [0.5 * (x0 + x1), 0.5 * (y0 + y1)]) * scale + size / 2


def roi_align(feature_map, center, box, out_size: int):
    """Bilinear ROI align on a ``(C, H, W)`` map (numpy or torch).

    Samples ``out_size`` x ``out_size`` points at the cell centers of the
    box ``(w, h)`` centered at ``center = (x, y)`` in feature-map pixel
    units; coordinates outside the map are clamped to the border. Returns
    ``(out_size, out_size, C)``.
    """
    is_np = isinstance(feature_map, np.ndarray)
    fm = torch.as_tensor(feature_map)
    C, H, W = fm.shape
    cx, cy = float(center[0]), float(center[1])
    bw, bh = float(box[0]), float(box[1])
    steps = (torch.arange(out_size, dtype=fm.dtype) + 0.5) / out_size - 0.5
    xs = (cx + steps * bw).clamp(0, W - 1)
    ys = (cy + steps * bh).clamp(0, H - 1)
    x0 = xs.floor().long().clamp(max=W - 2) if W > 1 else torch.zeros_like(xs, dtype=torch.long)
    y0 = ys.floor().long().clamp(max=H - 2) if H > 1 else torch.zeros_like(ys, dtype=torch.long)
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)
    wx = (xs - x0.to(fm.dtype))[None, :]
    wy = (ys - y0.to(fm.dtype))[:, None]
    f00 = fm[:, y0][:, :, x0]
    f01 = fm[:, y0][:, :, x1]
    f10 = fm[:, y1][:, :, x0]
    f11 = fm[:, y1][:, :, x1]
    out = (1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11)
    out = out.permute(1, 2, 0)
    return out.numpy() if is_np else out


def roi_align_batch(fmap: torch.Tensor, centers: torch.Tensor, boxes: torch.Tensor, out_size: int) -> torch.Tensor:
    """Batched ROI align via ``grid_sample``.

    ``fmap`` (B, C, H, W); ``centers``/``boxes`` (B, K, 2) in feature-map
    pixels. Returns (B, K, out_size * out_size * C), matching
    :func:`roi_align` per ROI.
    """
    B, C, H, W = fmap.shape
    K = centers.shape[1]
    steps = (torch.arange(out_size, dtype=fmap.dtype, device=fmap.device) + 0.5) / out_size - 0.5
    xs = centers[..., 0:1] + steps * boxes[..., 0:1]
    ys = centers[..., 1:2] + steps * boxes[..., 1:2]
    xs = xs.clamp(0, W - 1)
    ys = ys.clamp(0, H - 1)
    gx = xs / max(W - 1, 1) * 2 - 1
    gy = ys / max(H - 1, 1) * 2 - 1
    grid = torch.stack(torch.broadcast_tensors(gx[..., None, :], gy[..., :, None]), dim=-1)
    grid = grid.reshape(B, K * out_size, out_size, 2)
    s = F.grid_sample(fmap, grid, mode="bilinear", padding_mode="border", align_corners=True)
    s = s.reshape(B, C, K, out_size, out_size).permute(0, 2, 3, 4, 1)
    return s.reshape(B, K, -1)


class TinyBackbone(nn.Module):
    """Three stride-2 conv blocks: 1 -> 32 -> 64 -> ``channels``, stride 8."""

    def __init__(self, channels: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, 32, 5, stride=2, padding=2), nn.GELU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(64, channels, 3, stride=2, padding=1), nn.GELU(),
        )

    def forward(self, x):
        return self.net(x)


class RasterFeatures(nn.Module):
    """Backbone + ROI align producing raw joint and context features."""

    def __init__(self, cfg: FeatureConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = TinyBackbone(cfg.backbone_channels)

    def forward(self, crops, joint_xy, joint_box, image=None):
        """``crops`` (B, 1, S, S); ``joint_xy`` (B, 17, 2) raster pixels;
        ``joint_box`` (B,) ROI side in raster pixels; ``image`` optional
        (B, 1, S, S) whole-frame raster."""
        cfg = self.cfg
        fmap = self.backbone(crops)
        stride = crops.shape[-1] / fmap.shape[-1]
        centers = (joint_xy + 0.5) / stride - 0.5
        boxes = (joint_box / stride)[:, None, None].expand(-1, NUM_JOINTS, 2)
        joints = roi_align_batch(fmap, centers, boxes, cfg.joint_patch)
        Hf = fmap.shape[-1]
        full_c = torch.full((fmap.shape[0], 1, 2), (Hf - 1) / 2.0, dtype=fmap.dtype)
        full_b = torch.full((fmap.shape[0], 1, 2), float(Hf), dtype=fmap.dtype)
        body = self._context(fmap, full_c, full_b)
        img = None
        if image is not None:
            imap = self.backbone(image)
            img = self._context(imap, full_c, full_b)
        return joints, body, img

    def _context(self, fmap, c, b):
        # 16x16 ROI pooled to the joint patch size so the joint projection applies
        p = self.cfg.context_patch
        s = roi_align_batch(fmap, c, b, p).reshape(fmap.shape[0], p, p, -1).permute(0, 3, 1, 2)
        s = F.adaptive_avg_pool2d(s, self.cfg.joint_patch)
        return s.permute(0, 2, 3, 1).reshape(fmap.shape[0], -1)


def raster_inputs(track, frame: int, cfg: FeatureConfig, with_image: bool = False):
    """Numpy raster inputs for one frame of a track (see :class:`RasterFeatures`)."""
    conf = track.confidence[frame]
    mask = joint_mask(conf, cfg.undetected_confidence)
    kp = track.keypoints[frame]
    x0, y0, x1, y1 = track.bbox[frame]
    side = max(x1 - x0, y1 - y0, 1.0)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    region = (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)
    out = {
        "crop": rasterize_stick_figure(kp, mask, region, cfg.raster_size),
        "joint_xy": raster_coords(kp, region, cfg.raster_size),
        "joint_box": cfg.joint_box_scale * (y1 - y0) * cfg.raster_size / side,
    }
    if with_image:
        W, H = track.image_size
        out["image"] = rasterize_stick_figure(kp, mask, (0, 0, W, H), cfg.raster_size)
    return out


# ---------------------------------------------------------------- learned side


@dataclass
class FrameTokens:
    """Joint-encoder input for a batch of frames (leading dims arbitrary)."""

    tokens: torch.Tensor  # (..., 17, d)
    mask: torch.Tensor  # (..., 17) bool, True = valid
    class_extras: torch.Tensor  # (..., d)
    relpos: torch.Tensor  # (..., 17, 2)


class TokenEmbedding(nn.Module):
    """Learned projection of raw features plus joint/relative-position codes."""

    def __init__(self, raw_dim: int, embed_dim: int, variant: str = "DP", body_dim: int = BODY_CONTEXT_DIM,
                 image_dim: int = IMAGE_CONTEXT_DIM, shared_context_projection: bool = False):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.visual = nn.Linear(raw_dim, embed_dim)
        self.joint_index = nn.Embedding(NUM_JOINTS, embed_dim)
        self.relpos = nn.Linear(2, embed_dim)
        self.shared = shared_context_projection
        self.body = None
        self.image = None
        if not shared_context_projection:
            if variant in ("DP-B", "DP-BI"):
                self.body = nn.Linear(body_dim, embed_dim)
            if variant == "DP-BI":
                self.image = nn.Linear(image_dim, embed_dim)

    def positional_code(self, joint_index, relpos):
        return self.joint_index(joint_index) + self.relpos(relpos)

    def forward(self, raw, relpos, mask, body=None, image=None) -> FrameTokens:
        idx = torch.arange(NUM_JOINTS, device=raw.device)
        tok = self.visual(raw) + self.positional_code(idx, relpos)
        tok = torch.where(mask[..., None], tok, torch.zeros((), dtype=tok.dtype))
        extras = torch.zeros(tok.shape[:-2] + tok.shape[-1:], dtype=tok.dtype, device=tok.device)
        if self.variant in ("DP-B", "DP-BI"):
            extras = extras + (self.visual(body) if self.shared else self.body(body))
        if self.variant == "DP-BI":
            extras = extras + (self.visual(image) if self.shared else self.image(image))
        return FrameTokens(tok, mask, extras, relpos)


def assemble_frame_tokens(features: dict, embedding: TokenEmbedding, frame: int | None = None,
                          dtype=torch.float32) -> FrameTokens:
    """Tokens for one frame (or all frames) of :func:`track_features` output."""
    sel = slice(None) if frame is None else frame

    def t(key):
        return torch.as_tensor(np.asarray(features[key][sel]), dtype=dtype)

    mask = torch.as_tensor(np.asarray(features["mask"][sel]), dtype=torch.bool)
    return embedding(t("desc"), t("relpos"), mask, t("body"), t("image"))
