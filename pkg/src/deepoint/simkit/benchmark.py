"""Whole-benchmark generation: rooms x actors sessions with per-camera tracks."""

from __future__ import annotations

from dataclasses import dataclass, field

from .observe import BENCHMARK_NOISE, NoiseModel, PoseTrack, observe
from .room import ActorSpec, RoomSpec, default_actors, default_room
from .session import SessionTruth, derive_seed, generate_session

ROOM_NAMES = ("living", "office")


@dataclass
class Session:
    """A simulated session bundled with its room, actor and camera tracks."""

    truth: SessionTruth
    room: RoomSpec
    actor: ActorSpec
    tracks: dict[str, PoseTrack] = field(default_factory=dict)

    @property
    def session_id(self) -> str:
        return self.truth.session_id

    @property
    def room_id(self) -> str:
        return self.room.room_id

    @property
    def actor_id(self) -> str:
        return self.actor.actor_id

    @property
    def n_frames(self) -> int:
        return self.truth.n_frames


def simulate_session(room, actor, duration_s, seed, noise: NoiseModel = BENCHMARK_NOISE, **kw) -> Session:
    truth = generate_session(room, actor, duration_s, seed, **kw)
    tracks = {c.camera_id: observe(truth, c, noise, seed, room) for c in room.cameras}
    return Session(truth, room, actor, tracks)


def make_benchmark(
    n_rooms: int = 2,
    n_actors: int = 8,
    duration_s: float = 120.0,
    n_cameras: int = 6,
    seed: int = 0,
    noise: NoiseModel = BENCHMARK_NOISE,
    n_markers: int = 40,
) -> list[Session]:
    """Every actor in every room; the default is the desk-scale benchmark."""
    rooms = []
    for r in range(n_rooms):
        name = ROOM_NAMES[r % len(ROOM_NAMES)] + ("" if r < len(ROOM_NAMES) else str(r))
        rooms.append(default_room(name, seed=derive_seed(seed, "room", r), layout=ROOM_NAMES[r % 2],
                                  n_cameras=n_cameras, n_markers=n_markers))
    actors = default_actors(n_actors, seed=derive_seed(seed, "actors"))
    return [simulate_session(room, actor, duration_s, seed, noise) for room in rooms for actor in actors]
