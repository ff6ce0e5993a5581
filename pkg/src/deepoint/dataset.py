"""On-disk dataset layout shared by simulator output and annotations.

::

    <root>/
      splits.json                      {"mode", "train"|"val"|"test": [{"session","start","end"}]}
      session_<id>/
        room.json                      RoomSpec (cameras, markers, obstacles)
        actor.json                     ActorSpec
        events.json                    session meta + button_intervals + utterances
        truth.jsonl                    {"frame","joints"[17][3],"pointing","dir","marker","seated"}
        tracks/<camera_id>.jsonl       {"frame","kp"[17][u,v,conf],"bbox"[4]}
        annotations.jsonl              {"frame","pointing","dir_world","dir_cam","instance","hand"}

All lengths are meters, all image quantities pixels. Optional fields are
omitted (not null) when absent. Floats are written with ``repr`` precision,
so export -> load is lossless.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annopipe import AnnotatedFrame
from .errors import MissingFile, SchemaError
from .simkit.benchmark import Session
from .simkit.observe import PoseTrack
from .simkit.room import ActorSpec, RoomSpec
from .simkit.session import EventLog, SessionTruth
from .simkit.splits import SPLIT_NAMES, SplitAssignment
from .skeleton import NUM_JOINTS

DATA_ROOT_ENV = "DEEPOINT_DATA"


@dataclass
class Dataset:
    sessions: dict[str, Session] = field(default_factory=dict)
    annotations: dict[str, list[AnnotatedFrame]] = field(default_factory=dict)
    splits: SplitAssignment | None = None


def default_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def _session_dir(root: Path, session_id: str) -> Path:
    return root / f"session_{session_id}"


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=1))
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def _write_jsonl(path: Path, records) -> None:
    try:
        with path.open("w") as fh:
            for r in records:
                fh.write(json.dumps(r, separators=(",", ":")))
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def _vec(v):
    return [float(x) for x in v]


def truth_records(truth: SessionTruth):
    for i in range(truth.n_frames):
        r = {"frame": i, "joints": [_vec(j) for j in truth.skeletons[i]], "pointing": int(truth.is_pointing[i])}
        if truth.is_pointing[i]:
            r["dir"] = _vec(truth.directions[i])
            r["marker"] = truth.marker_ids[i]
        if truth.seated is not None:
            r["seated"] = float(truth.seated[i])
        yield r


def track_records(track: PoseTrack):
    for i in range(track.n_frames):
        kp = [[float(track.keypoints[i, j, 0]), float(track.keypoints[i, j, 1]), float(track.confidence[i, j])]
              for j in range(NUM_JOINTS)]
        yield {"frame": i, "kp": kp, "bbox": _vec(track.bbox[i])}


def annotation_records(frames: list[AnnotatedFrame]):
    for f in frames:
        r = {"frame": f.frame_index, "pointing": int(f.is_pointing)}
        if f.world_direction is not None:
            r["dir_world"] = _vec(f.world_direction)
            r["dir_cam"] = {c: _vec(v) for c, v in f.camera_directions.items()}
        if f.instance_id is not None:
            r["instance"] = int(f.instance_id)
        if f.hand_position_world is not None:
            r["hand"] = _vec(f.hand_position_world)
        yield r


def write_session(root: Path, session: Session, annotations: list[AnnotatedFrame] | None = None) -> Path:
    d = _session_dir(Path(root), session.session_id)
    (d / "tracks").mkdir(parents=True, exist_ok=True)
    t = session.truth
    _write_json(d / "room.json", session.room.to_dict())
    _write_json(d / "actor.json", session.actor.to_dict())
    _write_json(d / "events.json", {
        "session_id": t.session_id, "room_id": t.room_id, "actor_id": t.actor_id,
        "fps": t.fps, "n_frames": t.n_frames, "dominant_side": t.dominant_side,
        **t.events.to_dict(),
    })
    _write_jsonl(d / "truth.jsonl", truth_records(t))
    for cid, track in session.tracks.items():
        _write_jsonl(d / "tracks" / f"{cid}.jsonl", track_records(track))
    if annotations is not None:
        _write_jsonl(d / "annotations.jsonl", annotation_records(annotations))
    return d


def write_dataset(out_dir, sessions, annotations=None, splits: SplitAssignment | None = None) -> Path:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    ids = set()
    for s in sessions:
        write_session(root, s, None if annotations is None else annotations.get(s.session_id))
        ids.add(s.session_id)
    if splits is not None:
        for name in SPLIT_NAMES:
            missing = splits.sessions(name) - ids
            if missing:
                raise ValueError(f"split {name} references sessions not being exported: {sorted(missing)}")
        _write_json(root / "splits.json", splits.to_dict())
    return root


# ---------------------------------------------------------------- loading


def _read_json(path: Path):
    if not path.exists():
        raise MissingFile(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", path, exc.lineno) from exc


def _read_jsonl(path: Path):
    if not path.exists():
        raise MissingFile(f"missing file {path}")
    with path.open() as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON record ({exc.msg})", path, n) from exc


def _need(rec, key, path, line, kind=None, length=None):
    if key not in rec:
        raise SchemaError(f"missing field {key!r}", path, line)
    v = rec[key]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"field {key!r} has type {type(v).__name__}", path, line)
    if length is not None and len(v) != length:
        raise SchemaError(f"field {key!r} has length {len(v)}, expected {length}", path, line)
    return v


def _check_frame(rec, expected, path, line):
    f = _need(rec, "frame", path, line, int)
    if f != expected:
        raise SchemaError(f"frame {f} out of order (expected {expected})", path, line)


def _load_truth(d: Path, meta: dict) -> SessionTruth:
    path = d / "truth.jsonl"
    n = meta["n_frames"]
    sk = np.zeros((n, NUM_JOINTS, 3))
    pointing = np.zeros(n, dtype=bool)
    dirs = np.full((n, 3), np.nan)
    markers = [None] * n
    seated = np.zeros(n)
    count = 0
    for line, rec in _read_jsonl(path):
        _check_frame(rec, count, path, line)
        joints = _need(rec, "joints", path, line, list, NUM_JOINTS)
        try:
            sk[count] = np.asarray(joints, dtype=np.float64)
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"malformed joints ({exc})", path, line) from exc
        pointing[count] = bool(_need(rec, "pointing", path, line, int))
        if pointing[count]:
            dirs[count] = _need(rec, "dir", path, line, list, 3)
            markers[count] = _need(rec, "marker", path, line, str)
        seated[count] = rec.get("seated", 0.0)
        count += 1
    if count != n:
        raise SchemaError(f"expected {n} frames, found {count}", path, count + 1)
    events = EventLog.from_dict(meta)
    return SessionTruth(meta["session_id"], meta["room_id"], meta["actor_id"], int(meta["fps"]), sk, events,
                        pointing, dirs, markers, meta.get("dominant_side", "right"), seated)


def _load_track(path: Path, n: int, image_size) -> PoseTrack:
    kp = np.zeros((n, NUM_JOINTS, 2))
    conf = np.zeros((n, NUM_JOINTS))
    bbox = np.zeros((n, 4))
    count = 0
    for line, rec in _read_jsonl(path):
        if count >= n:
            raise SchemaError(f"more than {n} frames", path, line)
        _check_frame(rec, count, path, line)
        arr = _need(rec, "kp", path, line, list, NUM_JOINTS)
        try:
            a = np.asarray(arr, dtype=np.float64)
        except ValueError as exc:
            raise SchemaError(f"malformed keypoints ({exc})", path, line) from exc
        if a.shape != (NUM_JOINTS, 3):
            raise SchemaError(f"keypoints have shape {a.shape}, expected (17, 3)", path, line)
        if ((a[:, 2] < 0) | (a[:, 2] > 1)).any():
            raise SchemaError("confidence outside [0, 1]", path, line)
        kp[count] = a[:, :2]
        conf[count] = a[:, 2]
        bbox[count] = _need(rec, "bbox", path, line, list, 4)
        count += 1
    if count != n:
        raise SchemaError(f"expected {n} frames, found {count}", path, count + 1)
    return PoseTrack(path.stem, kp, conf, bbox, tuple(image_size))


def _load_annotations(path: Path, n: int) -> list[AnnotatedFrame]:
    frames = []
    for line, rec in _read_jsonl(path):
        _check_frame(rec, len(frames), path, line)
        pointing = bool(_need(rec, "pointing", path, line, int))
        f = AnnotatedFrame(len(frames), pointing)
        if "dir_world" in rec:
            if not pointing:
                raise SchemaError("direction on a non-pointing frame", path, line)
            f.world_direction = np.asarray(_need(rec, "dir_world", path, line, list, 3), dtype=np.float64)
            f.camera_directions = {c: np.asarray(v, dtype=np.float64)
                                   for c, v in _need(rec, "dir_cam", path, line, dict).items()}
        if "instance" in rec:
            f.instance_id = int(rec["instance"])
        if "hand" in rec:
            f.hand_position_world = np.asarray(_need(rec, "hand", path, line, list, 3), dtype=np.float64)
        frames.append(f)
    if len(frames) != n:
        raise SchemaError(f"expected {n} frames, found {len(frames)}", path, len(frames) + 1)
    return frames


def load_session(d: Path) -> tuple[Session, list[AnnotatedFrame] | None]:
    d = Path(d)
    meta = _read_json(d / "events.json")
    for key in ("session_id", "room_id", "actor_id", "fps", "n_frames", "button_intervals", "utterances"):
        if key not in meta:
            raise SchemaError(f"missing field {key!r}", d / "events.json")
    room = RoomSpec.from_dict(_read_json(d / "room.json"))
    actor = ActorSpec.from_dict(_read_json(d / "actor.json"))
    truth = _load_truth(d, meta)
    tracks = {}
    tdir = d / "tracks"
    for cam in room.cameras:
        p = tdir / f"{cam.camera_id}.jsonl"
        if p.exists():
            tracks[cam.camera_id] = _load_track(p, truth.n_frames, cam.image_size)
    ann = None
    if (d / "annotations.jsonl").exists():
        ann = _load_annotations(d / "annotations.jsonl", truth.n_frames)
    return Session(truth, room, actor, tracks), ann


def load_dataset(path=None) -> Dataset:
    """Load and validate a dataset directory.

    Raises :class:`SchemaError` (with file and line) for malformed records
    and for splits that reference absent sessions or frame ranges.
    """
    root = Path(path) if path is not None else default_root()
    if not root.is_dir():
        raise MissingFile(f"dataset directory {root} does not exist")
    ds = Dataset()
    for d in sorted(root.glob("session_*")):
        session, ann = load_session(d)
        ds.sessions[session.session_id] = session
        if ann is not None:
            ds.annotations[session.session_id] = ann
    if (root / "splits.json").exists():
        raw = _read_json(root / "splits.json")
        if "mode" not in raw:
            raise SchemaError("missing field 'mode'", root / "splits.json")
        splits = SplitAssignment.from_dict(raw)
        for name in SPLIT_NAMES:
            for sid, a, b in splits.ranges(name):
                if sid not in ds.sessions:
                    raise SchemaError(f"split {name} references absent session {sid!r}", root / "splits.json")
                if not 0 <= a <= b < ds.sessions[sid].n_frames:
                    raise SchemaError(f"split {name} range [{a}, {b}] outside session {sid!r}", root / "splits.json")
        ds.splits = splits
    return ds
