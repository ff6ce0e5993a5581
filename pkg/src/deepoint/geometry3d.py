"""Projective geometry helpers: pinhole cameras, DLT triangulation, direction
algebra and the Mollweide map used for direction histograms.

Conventions
-----------
World frame is right-handed and z-up. Yaw is the azimuth around +z measured
from +x towards +y; pitch is the elevation above the xy-plane.

Cameras follow the usual computer-vision convention: ``x_cam = R @ X + t``
with the camera looking down +z, +x to the right and +y down in the image.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CoincidentPoints,
    DegenerateGeometry,
    InsufficientViews,
    NonPositiveDepth,
)

DEPTH_EPS = 1e-9
MAX_CONDITION = 1e12
DEFAULT_MIN_CONFIDENCE = 0.5
REWEIGHT_ITERS = 3


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera without lens distortion."""

    camera_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9 or np.linalg.det(R) <= 0:
            raise ValueError(f"camera {self.camera_id}: rotation is not a proper rotation")
        w, h = self.image_size
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"camera {self.camera_id}: focal lengths must be positive")
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise ValueError(f"camera {self.camera_id}: principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def P(self) -> np.ndarray:
        """3x4 projection matrix ``K [R | t]``."""
        return self.K @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, camera_id, position, target, fx, fy, image_size, up=(0.0, 0.0, 1.0)):
        """Build a camera at ``position`` whose optical axis points at ``target``."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        w, h = image_size
        return cls(camera_id, fx, fy, (w - 1) / 2.0, (h - 1) / 2.0, R, -R @ position, (w, h))

    def to_dict(self) -> dict:
        w, h = self.image_size
        return {
            "id": self.camera_id,
            "image_size": [w, h],
            "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        k = d["intrinsics"]
        return cls(
            camera_id=str(d["id"]),
            fx=float(k["fx"]),
            fy=float(k["fy"]),
            cx=float(k["cx"]),
            cy=float(k["cy"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(d["translation"], dtype=np.float64),
            image_size=tuple(d["image_size"]),
        )


@dataclass(frozen=True)
class Observation2D:
    camera_id: str
    pixel: tuple[float, float]
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass
class TriangulationResult:
    point: np.ndarray
    residual_px: float
    camera_ids: list[str] = field(default_factory=list)


def to_camera(camera: CameraModel, point) -> np.ndarray:
    return camera.rotation @ np.asarray(point, dtype=np.float64) + camera.translation


def project(camera: CameraModel, point) -> np.ndarray:
    """Project a world point to pixel coordinates ``(u, v)``."""
    x, y, z = to_camera(camera, point)
    if z <= DEPTH_EPS:
        raise NonPositiveDepth(f"point has depth {z:.3g} in camera {camera.camera_id}")
    return np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])


def project_many(camera: CameraModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of ``(..., 3)`` points.

    Returns pixels ``(..., 2)`` and depths ``(...)``; pixels are NaN where the
    depth is not positive. Never raises.
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ camera.rotation.T + camera.translation
    z = cam[..., 2]
    ok = z > DEPTH_EPS
    zs = np.where(ok, z, 1.0)
    uv = np.stack([camera.fx * cam[..., 0] / zs + camera.cx, camera.fy * cam[..., 1] / zs + camera.cy], axis=-1)
    uv[~ok] = np.nan
    return uv, z


def triangulate(
    observations,
    cameras,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> TriangulationResult:
    """Confidence-weighted linear (DLT) triangulation.

    ``cameras`` maps camera id to :class:`CameraModel` (a list is accepted and
    keyed by ``camera_id``). Observations below ``min_confidence`` are dropped
    before solving; each surviving view contributes two rows scaled by its
    confidence. The linear system is re-solved with rows scaled by focal
    length over current depth, so the minimized quantity approximates the
    confidence-weighted pixel reprojection error.
    """
    if not isinstance(cameras, dict):
        cameras = {c.camera_id: c for c in cameras}
    used = [o for o in observations if o.confidence >= min_confidence]
    if len(used) < 2:
        raise InsufficientViews(f"{len(used)} view(s) pass min_confidence={min_confidence}, need 2")

    base = []
    for obs in used:
        cam = cameras[obs.camera_id]
        xn = (obs.pixel[0] - cam.cx) / cam.fx
        yn = (obs.pixel[1] - cam.cy) / cam.fy
        Rt = np.hstack([cam.rotation, cam.translation[:, None]])
        base.append((xn * Rt[2] - Rt[0], yn * Rt[2] - Rt[1], Rt[2], cam.fx, cam.fy, obs.confidence))

    # iteratively reweighted DLT: scaling each view's rows by f / depth turns
    # the algebraic residual into a pixel reprojection residual
    scale = np.ones(len(base))
    point = None
    for _ in range(1 + REWEIGHT_ITERS):
        rows = []
        for (rx, ry, _, fx, fy, c), k in zip(base, scale):
            rows.append(c * k * fx * rx)
            rows.append(c * k * fy * ry)
        A = np.asarray(rows)
        A /= np.abs(A).max()
        _, s, Vt = np.linalg.svd(A)
        if s[2] <= s[0] / MAX_CONDITION:
            raise DegenerateGeometry(f"triangulation system is rank deficient (singular values {s})")
        X = Vt[-1]
        if abs(X[3]) < 1e-15:
            raise DegenerateGeometry("triangulated point is at infinity")
        point = X[:3] / X[3]
        depth = np.array([r3 @ np.append(point, 1.0) for _, _, r3, _, _, _ in base])
        if (depth <= DEPTH_EPS).any():
            break
        scale = 1.0 / depth

    errs = []
    for obs in used:
        uv, z = project_many(cameras[obs.camera_id], point)
        if z <= DEPTH_EPS:
            raise DegenerateGeometry(f"triangulated point lies behind camera {obs.camera_id}")
        errs.append(np.hypot(uv[0] - obs.pixel[0], uv[1] - obs.pixel[1]))
    return TriangulationResult(point, float(np.mean(errs)), [o.camera_id for o in used])


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def angular_error(u, v) -> np.ndarray | float:
    """Angle between unit vectors in degrees; broadcasts over leading axes."""
    cos = np.sum(np.asarray(u, dtype=np.float64) * np.asarray(v, dtype=np.float64), axis=-1)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(ang) if np.ndim(ang) == 0 else ang


def dir_between(start, end) -> np.ndarray:
    diff = np.asarray(end, dtype=np.float64) - np.asarray(start, dtype=np.float64)
    n = np.linalg.norm(diff)
    if n <= 1e-9:
        raise CoincidentPoints("direction between coincident points is undefined")
    return diff / n


def world_to_camera_dir(camera: CameraModel, d) -> np.ndarray:
    return np.asarray(d, dtype=np.float64) @ camera.rotation.T


def camera_to_world_dir(camera: CameraModel, d) -> np.ndarray:
    return np.asarray(d, dtype=np.float64) @ camera.rotation


def dir_to_yaw_pitch(d) -> tuple:
    """World direction to ``(yaw, pitch)`` in degrees.

    Yaw lies in (-180, 180] and is reported as 0 at the poles.
    """
    d = np.asarray(d, dtype=np.float64)
    pitch = np.degrees(np.arcsin(np.clip(d[..., 2], -1.0, 1.0)))
    horiz = np.hypot(d[..., 0], d[..., 1])
    yaw = np.where(horiz < 1e-12, 0.0, np.degrees(np.arctan2(d[..., 1], d[..., 0])))
    yaw = np.where(yaw <= -180.0, yaw + 360.0, yaw)
    if np.ndim(pitch) == 0:
        return float(yaw), float(pitch)
    return yaw, pitch


def yaw_pitch_to_dir(yaw_deg, pitch_deg) -> np.ndarray:
    yaw = np.radians(yaw_deg)
    pitch = np.radians(pitch_deg)
    c = np.cos(pitch)
    return np.stack([c * np.cos(yaw), c * np.sin(yaw), np.sin(pitch)], axis=-1)


class MollweideConvergenceWarning(RuntimeWarning):
    pass


def _x_minus_sin_x(x):
    # x - sin(x) without cancellation for small x
    x = np.asarray(x, dtype=np.float64)
    series = x**3 / 6 - x**5 / 120 + x**7 / 5040 - x**9 / 362880
    return np.where(np.abs(x) < 1e-2, series, x - np.sin(x))


def _mollweide_theta_polar(pitch):
    # with d = pi/2 - |theta|, the equation becomes 2d - sin 2d = 2 pi sin^2(colat / 2)
    colat = np.pi / 2 - np.abs(pitch)
    rhs = 2 * np.pi * np.sin(colat / 2) ** 2
    lo = np.zeros_like(pitch)
    hi = np.full_like(pitch, np.pi / 2)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = _x_minus_sin_x(2 * mid) < rhs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.sign(pitch) * (np.pi / 2 - 0.5 * (lo + hi))


def mollweide_theta(pitch, tol: float = 1e-12, max_iter: int = 50):
    """Auxiliary angle solving ``2t + sin 2t = pi sin(pitch)``.

    Returns ``(theta, converged)``. Newton from ``t0 = pitch``; bisection for
    ``|pitch| > 89.9 deg`` where the derivative vanishes.
    """
    pitch = np.asarray(pitch, dtype=np.float64)
    target = np.pi * np.sin(pitch)
    theta = pitch.copy()
    near_pole = np.abs(pitch) > np.radians(89.9)
    converged = np.zeros(pitch.shape, dtype=bool) | near_pole
    for _ in range(max_iter):
        active = ~converged
        if not active.any():
            break
        f = 2 * theta + np.sin(2 * theta) - target
        fp = 2 + 2 * np.cos(2 * theta)
        step = np.where(active, f / np.where(fp == 0, 1.0, fp), 0.0)
        theta = theta - step
        converged |= np.abs(step) < tol
    if near_pole.any():
        theta = np.where(near_pole, _mollweide_theta_polar(pitch), theta)
    return theta, converged


def mollweide(yaw, pitch):
    """Mollweide plane coordinates (unit sphere) for angles in radians.

    Scalar input gives a float pair; arrays broadcast. A
    :class:`MollweideConvergenceWarning` is issued and the last Newton
    iterate used if the solver fails to converge.
    """
    yaw, pitch = np.broadcast_arrays(np.asarray(yaw, dtype=np.float64), np.asarray(pitch, dtype=np.float64))
    theta, ok = mollweide_theta(pitch)
    if not np.all(ok):
        warnings.warn("Mollweide Newton iteration did not converge", MollweideConvergenceWarning, stacklevel=2)
    x = (2 * math.sqrt(2) / math.pi) * yaw * np.cos(theta)
    y = math.sqrt(2) * np.sin(theta)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y
