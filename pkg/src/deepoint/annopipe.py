"""Semi-automatic labels from button/utterance events and multi-view pose.

Every frame inside a button interval is labeled pointing. Its direction is
the unit vector from the triangulated dominant wrist to the uttered marker,
expressed in world coordinates and in each camera's frame. Frames where
fewer than two cameras see the wrist confidently stay pointing but carry no
direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentPoints, DegenerateGeometry, InsufficientViews
from .geometry3d import (
    DEFAULT_MIN_CONFIDENCE,
    TriangulationResult,
    dir_between,
    triangulate,
    world_to_camera_dir,
)
from .simkit.session import EventLog
from .skeleton import wrist_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PointingInstance:
    instance_id: int
    start_frame: int
    end_frame: int
    marker_id: str

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError("instance start must not exceed its end")

    def __contains__(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame


@dataclass
class AnnotatedFrame:
    frame_index: int
    is_pointing: bool = False
    world_direction: np.ndarray | None = None
    camera_directions: dict[str, np.ndarray] | None = None
    instance_id: int | None = None
    hand_position_world: np.ndarray | None = None

    @property
    def has_direction(self) -> bool:
        return self.world_direction is not None


@dataclass
class AnnotationStats:
    missing_utterances: int = 0
    excluded_frames: int = 0
    annotated_frames: int = 0
    residuals_px: list = field(default_factory=list)


def segment_instances(events: EventLog, stats: AnnotationStats | None = None) -> list[PointingInstance]:
    """One instance per button interval, labeled by the utterance inside it."""
    out = []
    for k, (s, e) in enumerate(events.button_intervals):
        said = [m for f, m in events.utterances if s <= f <= e]
        if not said:
            log.warning("button interval [%d, %d] has no marker utterance; dropped", s, e)
            if stats is not None:
                stats.missing_utterances += 1
            continue
        out.append(PointingInstance(k, int(s), int(e), said[0]))
    return out


def triangulate_hand(tracks, cameras, frame: int, side: str,
                     min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> TriangulationResult:
    j = wrist_index(side)
    if isinstance(tracks, dict):
        tracks = list(tracks.values())
    obs = [t.observation(frame, j) for t in tracks]
    return triangulate(obs, cameras, min_confidence)


def annotate_frames(tracks, events: EventLog, room, side: str, n_frames: int | None = None,
                    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                    stats: AnnotationStats | None = None) -> list[AnnotatedFrame]:
    """Per-frame labels for a whole session.

    ``tracks`` maps camera id to :class:`~deepoint.simkit.PoseTrack`;
    ``room`` provides cameras and marker positions.
    """
    stats = stats if stats is not None else AnnotationStats()
    cams = room.camera_map
    if n_frames is None:
        n_frames = next(iter(tracks.values())).n_frames
    frames = [AnnotatedFrame(i) for i in range(n_frames)]
    for inst in segment_instances(events, stats):
        marker = room.markers[inst.marker_id]
        for i in range(inst.start_frame, min(inst.end_frame, n_frames - 1) + 1):
            fr = frames[i]
            fr.is_pointing = True
            fr.instance_id = inst.instance_id
            try:
                res = triangulate_hand(tracks, cams, i, side, min_confidence)
                d = dir_between(res.point, marker)
            except (InsufficientViews, DegenerateGeometry, CoincidentPoints):
                stats.excluded_frames += 1
                continue
            fr.hand_position_world = res.point
            fr.world_direction = d
            fr.camera_directions = {cid: world_to_camera_dir(cams[cid], d) for cid in tracks}
            stats.annotated_frames += 1
            stats.residuals_px.append(res.residual_px)
    return frames


def frames_to_arrays(frames: list[AnnotatedFrame], camera_ids) -> dict[str, np.ndarray]:
    """Dense arrays: ``pointing`` (T,), ``instance`` (T,) with -1 for none,
    ``world`` (T, 3) and ``camera`` {id: (T, 3)} with NaN where absent."""
    T = len(frames)
    pointing = np.array([f.is_pointing for f in frames], dtype=bool)
    instance = np.array([-1 if f.instance_id is None else f.instance_id for f in frames], dtype=np.int64)
    world = np.full((T, 3), np.nan)
    cam = {c: np.full((T, 3), np.nan) for c in camera_ids}
    for f in frames:
        if f.world_direction is not None:
            world[f.frame_index] = f.world_direction
            for c in camera_ids:
                cam[c][f.frame_index] = f.camera_directions[c]
    return {"pointing": pointing, "instance": instance, "world": world, "camera": cam}


def annotate_session(session, min_confidence: float = DEFAULT_MIN_CONFIDENCE,
                     stats: AnnotationStats | None = None) -> list[AnnotatedFrame]:
    """Convenience wrapper for a :class:`~deepoint.simkit.Session` bundle."""
    return annotate_frames(session.tracks, session.truth.events, session.room,
                           session.actor.dominant_side, session.n_frames, min_confidence, stats)


def export_dataset(sessions, annotations, splits, out_dir):
    """Write sessions, per-frame annotations and splits in the on-disk layout.

    ``annotations`` maps session id to the list from :func:`annotate_frames`.
    """
    from .dataset import write_dataset

    return write_dataset(out_dir, sessions, annotations, splits)
