"""Room and actor specifications plus the default benchmark generators."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry3d import CameraModel


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners (meters)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= np.asarray(self.lo) - margin) and np.all(p <= np.asarray(self.hi) + margin))

    def expanded(self, margin: float) -> "Box":
        return Box(tuple(np.asarray(self.lo) - margin), tuple(np.asarray(self.hi) + margin))

    def segment_hits(self, a, b) -> np.ndarray:
        """Slab test for segments ``a -> b``; broadcasts over leading axes of ``b``.

        Only the open interior of the segment counts, so endpoints lying on
        the box surface do not register as hits.
        """
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        d = b - a
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo - a) * inv
            t2 = (hi - a) * inv
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
        # parallel to a slab: inside iff the start lies between the planes
        parallel = d == 0
        inside = (a >= lo) & (a <= hi)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        enter = tmin.max(axis=-1)
        leave = tmax.min(axis=-1)
        return (enter <= leave) & (leave > 1e-6) & (enter < 1 - 1e-6)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(map(float, d["lo"])), tuple(map(float, d["hi"])))


@dataclass
class RoomSpec:
    room_id: str
    bounds: Box
    markers: dict[str, np.ndarray]
    cameras: list[CameraModel]
    obstacles: list[Box] = field(default_factory=list)

    def __post_init__(self):
        self.markers = {k: np.asarray(v, dtype=np.float64) for k, v in self.markers.items()}
        if len(self.cameras) < 2:
            raise ValueError(f"room {self.room_id}: need at least 2 cameras")
        if not self.markers:
            raise ValueError(f"room {self.room_id}: need at least 1 marker")
        for mid, p in self.markers.items():
            if not self.bounds.contains(p, 1e-9):
                raise ValueError(f"room {self.room_id}: marker {mid} outside bounds")
        for cam in self.cameras:
            if not self.bounds.contains(cam.center, 1e-9):
                raise ValueError(f"room {self.room_id}: camera {cam.camera_id} outside bounds")

    def camera(self, camera_id: str) -> CameraModel:
        for c in self.cameras:
            if c.camera_id == camera_id:
                return c
        raise KeyError(camera_id)

    @property
    def camera_map(self) -> dict[str, CameraModel]:
        return {c.camera_id: c for c in self.cameras}

    def to_dict(self) -> dict:
        return {
            "room_id": self.room_id,
            "bounds": self.bounds.to_dict(),
            "markers": {k: [float(x) for x in v] for k, v in self.markers.items()},
            "cameras": [c.to_dict() for c in self.cameras],
            "obstacles": [b.to_dict() for b in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(
            room_id=d["room_id"],
            bounds=Box.from_dict(d["bounds"]),
            markers={k: np.asarray(v, dtype=np.float64) for k, v in d["markers"].items()},
            cameras=[CameraModel.from_dict(c) for c in d["cameras"]],
            obstacles=[Box.from_dict(b) for b in d.get("obstacles", [])],
        )


@dataclass(frozen=True)
class ActorSpec:
    actor_id: str
    height: float = 1.70
    arm_length: float = 0.58
    dominant_side: str = "right"
    gait_speed: float = 0.9
    raise_duration: float = 0.45
    hold_duration: float = 0.8
    head_turn_gain: float = 0.7

    def __post_init__(self):
        for name in ("height", "arm_length", "gait_speed", "raise_duration", "hold_duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"actor {self.actor_id}: {name} must be positive")
        if not 0.3 <= self.hold_duration <= 1.5:
            raise ValueError(f"actor {self.actor_id}: hold_duration must lie in [0.3, 1.5] s")
        if not 0.0 <= self.head_turn_gain <= 1.0:
            raise ValueError(f"actor {self.actor_id}: head_turn_gain must lie in [0, 1]")
        if self.dominant_side not in ("left", "right"):
            raise ValueError(f"actor {self.actor_id}: dominant_side must be 'left' or 'right'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ActorSpec":
        return cls(**d)


ROOM_LAYOUTS = {
    # name: (size xyz, table boxes)
    "living": ((6.0, 5.0, 2.6), [((2.2, 1.8, 0.0), (3.4, 2.6, 0.45)), ((0.3, 3.6, 0.0), (1.9, 4.6, 0.8))]),
    "office": ((7.0, 5.5, 2.7), [((2.6, 2.2, 0.0), (4.4, 3.0, 0.74)), ((5.6, 0.3, 0.0), (6.7, 1.3, 1.1))]),
}


def default_room(
    room_id: str,
    seed: int = 0,
    layout: str | None = None,
    n_markers: int = 40,
    n_cameras: int = 6,
    image_size=(1280, 720),
    focal: float = 640.0,
) -> RoomSpec:
    """Furnished room with markers on walls, floor, ceiling and furniture tops.

    Cameras sit along the walls just below the ceiling and look at the room
    center at roughly chest height.
    """
    rng = np.random.default_rng(seed)
    if layout is None:
        layout = "living" if room_id.lower().startswith(("living", "a", "room0")) else "office"
    (sx, sy, sz), tables = ROOM_LAYOUTS[layout]
    bounds = Box((0.0, 0.0, 0.0), (sx, sy, sz))
    obstacles = [Box(lo, hi) for lo, hi in tables]

    markers = {}
    for i in range(n_markers):
        r = rng.uniform()
        if r < 0.55:
            wall = rng.integers(4)
            z = rng.uniform(0.2, sz - 0.2)
            if wall == 0:
                p = (0.0, rng.uniform(0.3, sy - 0.3), z)
            elif wall == 1:
                p = (sx, rng.uniform(0.3, sy - 0.3), z)
            elif wall == 2:
                p = (rng.uniform(0.3, sx - 0.3), 0.0, z)
            else:
                p = (rng.uniform(0.3, sx - 0.3), sy, z)
        elif r < 0.72:
            p = (rng.uniform(0.3, sx - 0.3), rng.uniform(0.3, sy - 0.3), 0.0)
        elif r < 0.89:
            p = (rng.uniform(0.3, sx - 0.3), rng.uniform(0.3, sy - 0.3), sz)
        else:
            b = obstacles[rng.integers(len(obstacles))]
            p = (rng.uniform(b.lo[0] + 0.1, b.hi[0] - 0.1), rng.uniform(b.lo[1] + 0.1, b.hi[1] - 0.1), b.hi[2])
        markers[f"m{i:02d}"] = np.asarray(p, dtype=np.float64)

    center = np.array([sx / 2, sy / 2, 1.0])
    perimeter = 2 * (sx + sy)
    cameras = []
    for i in range(n_cameras):
        s = (i + rng.uniform(-0.15, 0.15)) * perimeter / n_cameras
        s %= perimeter
        if s < sx:
            xy = (s, 0.05)
        elif s < sx + sy:
            xy = (sx - 0.05, s - sx)
        elif s < 2 * sx + sy:
            xy = (sx - (s - sx - sy), sy - 0.05)
        else:
            xy = (0.05, sy - (s - 2 * sx - sy))
        xy = (float(np.clip(xy[0], 0.05, sx - 0.05)), float(np.clip(xy[1], 0.05, sy - 0.05)))
        pos = np.array([xy[0], xy[1], sz - rng.uniform(0.15, 0.4)])
        target = center + rng.normal(0, [0.3, 0.3, 0.1])
        cameras.append(CameraModel.look_at(f"{room_id}_cam{i}", pos, target, focal, focal, image_size))
    return RoomSpec(room_id, bounds, markers, cameras, obstacles)


def random_actor(actor_id: str, rng: np.random.Generator) -> ActorSpec:
    height = float(rng.uniform(1.55, 1.90))
    return ActorSpec(
        actor_id=actor_id,
        height=height,
        arm_length=float(height * rng.uniform(0.32, 0.35)),
        dominant_side="left" if rng.uniform() < 0.15 else "right",
        gait_speed=float(rng.uniform(0.6, 1.1)),
        raise_duration=float(rng.uniform(0.35, 0.6)),
        hold_duration=float(rng.uniform(0.5, 1.2)),
        head_turn_gain=float(rng.uniform(0.2, 1.0)),
    )


def default_actors(n: int, seed: int = 0) -> list[ActorSpec]:
    rng = np.random.default_rng(seed)
    return [random_actor(f"p{i:02d}", rng) for i in range(n)]
