"""Simulated 2D pose-estimator output for one camera."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..geometry3d import CameraModel, Observation2D, project_many
from ..skeleton import JOINT_INDEX, NUM_JOINTS
from .room import RoomSpec
from .session import SessionTruth, derive_seed

TORSO = [JOINT_INDEX[j] for j in ("left_shoulder", "right_shoulder", "right_hip", "left_hip")]


@dataclass(frozen=True)
class NoiseModel:
    """Pose-estimator corruption.

    Visible joints get confidence ``1 - depth_decay * max(0, depth - 3 m)``
    floored at 0.55; occluded joints get ``occluded_confidence``.
    """

    pixel_sigma: float = 2.0
    dropout_prob: float = 0.02
    occlusion_enabled: bool = True
    depth_decay: float = 0.0
    occluded_confidence: float = 0.2

    def __post_init__(self):
        if self.pixel_sigma < 0:
            raise ValueError("pixel_sigma must be non-negative")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")
        if not 0.0 <= self.occluded_confidence <= 1.0:
            raise ValueError("occluded_confidence must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


BENCHMARK_NOISE = NoiseModel(pixel_sigma=2.0, dropout_prob=0.03, occlusion_enabled=True, depth_decay=0.04)


@dataclass
class PoseTrack:
    """Per-frame 17 keypoints of one person seen by one camera.

    ``keypoints`` ``(T, 17, 2)`` pixels, ``confidence`` ``(T, 17)`` with 0 for
    undetected joints, ``bbox`` ``(T, 4)`` as ``x0, y0, x1, y1`` (all zeros
    when the person is not in view).
    """

    camera_id: str
    keypoints: np.ndarray
    confidence: np.ndarray
    bbox: np.ndarray
    image_size: tuple[int, int] = (1280, 720)

    @property
    def n_frames(self) -> int:
        return len(self.keypoints)

    def observation(self, frame: int, joint: int) -> Observation2D:
        u, v = self.keypoints[frame, joint]
        return Observation2D(self.camera_id, (float(u), float(v)), float(self.confidence[frame, joint]))

    def observations(self, frame: int) -> list[Observation2D]:
        return [self.observation(frame, j) for j in range(NUM_JOINTS)]


def _point_in_quad(p, quad):
    """Convex-quad containment for ``p`` (..., 2) against ``quad`` (..., 4, 2)."""
    sign = None
    inside = np.ones(p.shape[:-1], dtype=bool)
    for k in range(4):
        a = quad[..., k, :]
        b = quad[..., (k + 1) % 4, :]
        cross = (b[..., 0] - a[..., 0]) * (p[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (p[..., 0] - a[..., 0])
        s = cross >= 0
        if sign is None:
            sign = s
        else:
            inside &= s == sign
    return inside


def occlusion_mask(skeletons: np.ndarray, camera: CameraModel, room: RoomSpec | None) -> np.ndarray:
    """``(T, 17)`` booleans: joint hidden by furniture or by the actor's torso.

    Furniture: the camera->joint segment crosses an obstacle box. Torso: the
    joint lies on the far side of the torso plane (by more than 5 cm) and
    projects inside the image quad spanned by shoulders and hips.
    """
    T = skeletons.shape[0]
    occ = np.zeros((T, NUM_JOINTS), dtype=bool)
    cam_c = camera.center
    if room is not None:
        for box in room.obstacles:
            occ |= box.segment_hits(cam_c, skeletons)

    sh_l, sh_r = skeletons[:, JOINT_INDEX["left_shoulder"]], skeletons[:, JOINT_INDEX["right_shoulder"]]
    hip_l, hip_r = skeletons[:, JOINT_INDEX["left_hip"]], skeletons[:, JOINT_INDEX["right_hip"]]
    center = (sh_l + sh_r + hip_l + hip_r) / 4
    across = sh_l - sh_r
    vert = (sh_l + sh_r) / 2 - (hip_l + hip_r) / 2
    normal = np.cross(across, vert)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    cam_side = np.sign(np.einsum("ti,ti->t", cam_c - center, normal))
    joint_side = np.einsum("tji,ti->tj", skeletons - center[:, None], normal)
    behind = joint_side * cam_side[:, None] < -0.05

    uv, _ = project_many(camera, skeletons)
    quad = uv[:, TORSO]
    in_quad = _point_in_quad(uv, np.repeat(quad[:, None], NUM_JOINTS, axis=1))
    in_quad &= np.isfinite(uv).all(axis=-1)
    occ |= behind & in_quad
    return occ


def _bbox(uv, valid, image_size):
    w, h = image_size
    T = uv.shape[0]
    box = np.zeros((T, 4))
    for t in range(T):
        v = valid[t]
        if not v.any():
            continue
        pts = uv[t, v]
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        mx, my = 0.1 * (x1 - x0) + 4, 0.1 * (y1 - y0) + 4
        box[t] = [max(0.0, x0 - mx), max(0.0, y0 - my), min(w - 1.0, x1 + mx), min(h - 1.0, y1 + my)]
    return box


def observe(
    truth: SessionTruth,
    camera: CameraModel,
    noise: NoiseModel,
    seed: int,
    room: RoomSpec | None = None,
) -> PoseTrack:
    """Project the session skeleton into ``camera`` and corrupt it.

    ``room`` supplies obstacles for furniture occlusion; without it only the
    torso self-occlusion rule applies.
    """
    rng = np.random.default_rng(derive_seed(seed, truth.session_id, camera.camera_id))
    sk = truth.skeletons
    T = sk.shape[0]
    w, h = camera.image_size
    uv, depth = project_many(camera, sk)
    in_front = depth > 1e-9
    exact = np.where(in_front[..., None], uv, 0.0)

    pix_noise = rng.normal(0.0, 1.0, size=(T, NUM_JOINTS, 2)) * noise.pixel_sigma
    drop = rng.uniform(size=(T, NUM_JOINTS)) < noise.dropout_prob
    obs = exact + pix_noise

    conf = np.ones((T, NUM_JOINTS))
    if noise.depth_decay > 0:
        conf = np.clip(1.0 - noise.depth_decay * np.maximum(0.0, depth - 3.0), 0.55, 1.0)
    if noise.occlusion_enabled:
        occ = occlusion_mask(sk, camera, room)
        conf = np.where(occ, np.minimum(conf, noise.occluded_confidence), conf)
    inside = in_front & (obs[..., 0] >= 0) & (obs[..., 0] <= w - 1) & (obs[..., 1] >= 0) & (obs[..., 1] <= h - 1)
    conf = np.where(inside & ~drop, conf, 0.0)
    obs = np.where(conf[..., None] > 0, obs, 0.0)

    # detector box from the true silhouette of joints in view
    vis_true = in_front & (exact[..., 0] >= 0) & (exact[..., 0] <= w - 1) & (exact[..., 1] >= 0) & (exact[..., 1] <= h - 1)
    bbox = _bbox(exact, vis_true, (w, h))
    return PoseTrack(camera.camera_id, obs, conf, bbox, (w, h))
