"""Procedural pointing sessions: a single actor wanders a room, occasionally
sits, and points at a marker once per 3-5 s cycle.

Each gesture is head lead -> arm raise -> hold -> arm lower. The button
interval is exactly the hold phase, during which the dominant wrist sits on
the shoulder->marker ray at ``arm_length`` from the shoulder.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleRoom
from ..geometry3d import dir_between
from ..skeleton import JOINT_INDEX, NUM_JOINTS, wrist_index
from .room import ActorSpec, RoomSpec

DEFAULT_FPS = 15
SEATED_PROB = 0.2
HEAD_LEAD_S = 0.25
SIT_TRANSITION_S = 0.5
MIN_MARKER_DISTANCE = 1.0
MAX_ARM_YAW = np.radians(45.0)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from ints/strings (independent of PYTHONHASHSEED)."""
    words = []
    for p in parts:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode()))
        else:
            words.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


@dataclass
class EventLog:
    button_intervals: list[tuple[int, int]] = field(default_factory=list)
    utterances: list[tuple[int, str]] = field(default_factory=list)

    def validate(self) -> None:
        prev_end = -1
        for s, e in self.button_intervals:
            if s > e or s <= prev_end:
                raise ValueError("button intervals must be sorted, disjoint and non-empty")
            prev_end = e
        for s, e in self.button_intervals:
            n = sum(1 for f, _ in self.utterances if s <= f <= e)
            if n != 1:
                raise ValueError(f"interval [{s}, {e}] has {n} utterances, expected 1")

    def to_dict(self) -> dict:
        return {
            "button_intervals": [[int(s), int(e)] for s, e in self.button_intervals],
            "utterances": [{"frame": int(f), "marker_id": m} for f, m in self.utterances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventLog":
        return cls(
            [tuple(map(int, iv)) for iv in d["button_intervals"]],
            [(int(u["frame"]), str(u["marker_id"])) for u in d["utterances"]],
        )


@dataclass
class SessionTruth:
    """Ground truth for one simulated capture.

    ``skeletons`` is ``(T, 17, 3)`` world coordinates in COCO order.
    ``directions`` is ``(T, 3)``, NaN off the button intervals.
    """

    session_id: str
    room_id: str
    actor_id: str
    fps: int
    skeletons: np.ndarray
    events: EventLog
    is_pointing: np.ndarray
    directions: np.ndarray
    marker_ids: list
    dominant_side: str = "right"
    seated: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return len(self.skeletons)

    @property
    def n_instances(self) -> int:
        return len(self.events.button_intervals)


def _ease(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _slerp(a, b, s):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    cos = float(np.clip(a @ b, -1.0, 1.0))
    ang = np.arccos(cos)
    if ang < 1e-9:
        return b.copy()
    if np.pi - ang < 1e-6:
        # antipodal: go through any perpendicular
        perp = np.cross(a, [0.0, 0.0, 1.0])
        if np.linalg.norm(perp) < 1e-9:
            perp = np.cross(a, [1.0, 0.0, 0.0])
        perp /= np.linalg.norm(perp)
        return np.cos(np.pi * s) * a + np.sin(np.pi * s) * perp
    return (np.sin((1 - s) * ang) * a + np.sin(s * ang) * b) / np.sin(ang)


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


class BodyModel:
    """Maps a compact per-frame body state to 17 COCO joints."""

    def __init__(self, actor: ActorSpec):
        H = actor.height
        self.H = H
        self.side = actor.dominant_side
        self.upper = 0.56 * actor.arm_length
        self.fore = actor.arm_length - self.upper
        self.thigh = 0.245 * H
        self.shin = 0.246 * H
        self.ankle_h = 0.039 * H
        self.hip_w = 0.06 * H
        self.shoulder_w = 0.115 * H
        self.torso = 0.29 * H
        self.neck = 0.10 * H

    def frame_axes(self, yaw):
        f = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        left = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
        return f, left

    def pelvis_height(self, seat, swing):
        alpha = seat * np.pi / 2 + (1 - seat) * swing
        beta = (1 - seat) * swing * 0.5
        return self.ankle_h + self.thigh * np.cos(alpha) + self.shin * np.cos(beta)

    def shoulder(self, root, yaw, seat, side):
        f, left = self.frame_axes(yaw)
        z = self.pelvis_height(seat, 0.0) + self.torso
        s = 1.0 if side == "left" else -1.0
        return np.array([root[0], root[1], z]) + s * self.shoulder_w * left - 0.02 * self.H * seat * f

    def joints(self, root, yaw, seat, walk_phase, walk_amp, head_dir, arm_dir):
        """``arm_dir`` is the dominant-arm direction or None for a resting arm."""
        up = np.array([0.0, 0.0, 1.0])
        f, left = self.frame_axes(yaw)
        J = np.zeros((NUM_JOINTS, 3))
        swing_l = walk_amp * np.sin(walk_phase)
        pz = self.pelvis_height(seat, abs(swing_l))
        pelvis = np.array([root[0], root[1], pz])
        # slight backward lean when seated
        lean = -0.02 * self.H * seat * f
        for side, s, swing in (("left", 1.0, swing_l), ("right", -1.0, -swing_l)):
            hip = pelvis + s * self.hip_w * left
            alpha = seat * np.pi / 2 + (1 - seat) * swing
            beta = (1 - seat) * (swing - 0.5 * abs(swing))
            knee = hip + self.thigh * (np.sin(alpha) * f - np.cos(alpha) * up)
            ankle = knee + self.shin * (np.sin(beta) * f - np.cos(beta) * up)
            J[JOINT_INDEX[f"{side}_hip"]] = hip
            J[JOINT_INDEX[f"{side}_knee"]] = knee
            J[JOINT_INDEX[f"{side}_ankle"]] = ankle
            sh = pelvis + lean + self.torso * up + s * self.shoulder_w * left
            J[JOINT_INDEX[f"{side}_shoulder"]] = sh
            if side == self.side and arm_dir is not None:
                d = arm_dir / np.linalg.norm(arm_dir)
                elbow = sh + self.upper * d
                wrist = elbow + self.fore * d
            else:
                a = -0.6 * swing + 0.12
                d_up = np.sin(a) * f - np.cos(a) * up + 0.08 * s * left
                d_up /= np.linalg.norm(d_up)
                elbow = sh + self.upper * d_up
                d_fore = np.sin(a + 0.25) * f - np.cos(a + 0.25) * up + 0.05 * s * left
                wrist = elbow + self.fore * d_fore / np.linalg.norm(d_fore)
            J[JOINT_INDEX[f"{side}_elbow"]] = elbow
            J[JOINT_INDEX[f"{side}_wrist"]] = wrist

        head_c = pelvis + lean + (self.torso + self.neck) * up
        hd = head_dir / np.linalg.norm(head_dir)
        hl = np.cross(up, hd)
        if np.linalg.norm(hl) < 1e-6:
            hl = left
        hl /= np.linalg.norm(hl)
        hu = np.cross(hd, hl)
        J[JOINT_INDEX["nose"]] = head_c + 0.055 * self.H * hd
        for side, s in (("left", 1.0), ("right", -1.0)):
            J[JOINT_INDEX[f"{side}_eye"]] = head_c + 0.045 * self.H * hd + 0.018 * self.H * hu + s * 0.019 * self.H * hl
            J[JOINT_INDEX[f"{side}_ear"]] = head_c - 0.005 * self.H * hd + 0.01 * self.H * hu + s * 0.046 * self.H * hl
        return J


def _rest_dir(yaw):
    f = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    d = -np.array([0.0, 0.0, 1.0]) * np.cos(0.2) + f * np.sin(0.2)
    return d / np.linalg.norm(d)


def _visible_markers(room: RoomSpec, eye):
    out = []
    for mid, p in room.markers.items():
        if np.linalg.norm(p - eye) < MIN_MARKER_DISTANCE:
            continue
        if any(b.segment_hits(eye, p) for b in room.obstacles):
            continue
        out.append(mid)
    return out


def _free_point(room: RoomSpec, rng, margin=0.6):
    lo = np.asarray(room.bounds.lo)[:2] + margin
    hi = np.asarray(room.bounds.hi)[:2] - margin
    for _ in range(200):
        p = rng.uniform(lo, hi)
        if not any(b.expanded(0.35).contains(np.array([p[0], p[1], 0.1])) for b in room.obstacles):
            return p
    raise InfeasibleRoom(f"room {room.room_id}: no free floor space")


def _path_clear(room: RoomSpec, a, b):
    a3 = np.array([a[0], a[1], 0.3])
    b3 = np.array([b[0], b[1], 0.3])
    return not any(o.expanded(0.3).segment_hits(a3, b3) for o in room.obstacles)


def _schedule(n_frames, fps, actor: ActorSpec, rng, seated_prob):
    """Cycles of 3-5 s, each holding one gesture; all times in frames."""
    cycles = []
    start = 0
    raise_f = max(2, int(round(actor.raise_duration * fps)))
    lead_f = int(round(HEAD_LEAD_S * fps))
    sit_f = int(round(SIT_TRANSITION_S * fps))
    while True:
        length = int(round(rng.uniform(3.0, 5.0) * fps))
        if start + length > n_frames:
            break
        hold = float(np.clip(actor.hold_duration * rng.uniform(0.7, 1.3), 0.3, 1.5))
        hold_f = max(int(np.ceil(0.3 * fps)), int(round(hold * fps)))
        gesture_f = lead_f + raise_f + hold_f + raise_f
        seated = rng.uniform() < seated_prob and length >= gesture_f + 2 * sit_f + 2
        lo = start + (sit_f + 1 if seated else 1)
        hi = start + length - gesture_f - (sit_f + 1 if seated else 1)
        g0 = int(rng.integers(lo, hi + 1))
        cycles.append({
            "start": start,
            "end": start + length - 1,
            "seated": seated,
            "lead": g0,
            "raise": g0 + lead_f,
            "hold": g0 + lead_f + raise_f,
            "lower": g0 + lead_f + raise_f + hold_f,
            "done": g0 + gesture_f - 1,
        })
        start += length
    return cycles


def generate_session(
    room: RoomSpec,
    actor: ActorSpec,
    duration_s: float,
    seed: int,
    fps: int = DEFAULT_FPS,
    seated_prob: float = SEATED_PROB,
    session_id: str | None = None,
) -> SessionTruth:
    if duration_s < 10:
        raise ValueError("duration_s must be at least 10 s")
    session_id = session_id or f"{room.room_id}_{actor.actor_id}"
    rng = np.random.default_rng(derive_seed(seed, session_id))
    n = int(round(duration_s * fps))
    dt = 1.0 / fps
    body = BodyModel(actor)
    side = actor.dominant_side

    cycles = _schedule(n, fps, actor, rng, seated_prob)
    phase_of = np.full(n, -1, dtype=np.int64)
    for ci, c in enumerate(cycles):
        phase_of[c["start"]:c["end"] + 1] = ci

    root = _free_point(room, rng)
    # feasibility: some marker must be usable from a standing position
    probe = np.array([root[0], root[1], 0.93 * actor.height])
    if not _visible_markers(room, probe):
        for _ in range(50):
            p = _free_point(room, rng)
            if _visible_markers(room, np.array([p[0], p[1], 0.93 * actor.height])):
                root = p
                break
        else:
            raise InfeasibleRoom(f"room {room.room_id}: no marker is visible from the walkable area")

    yaw = float(rng.uniform(-np.pi, np.pi))
    waypoint = _free_point(room, rng)
    walk_phase = 0.0
    stride = 0.75 * actor.height * 0.45

    skeletons = np.zeros((n, NUM_JOINTS, 3))
    seated_arr = np.zeros(n)
    is_pointing = np.zeros(n, dtype=bool)
    directions = np.full((n, 3), np.nan)
    marker_ids: list = [None] * n
    intervals, utterances = [], []
    gesture = None

    for i in range(n):
        ci = phase_of[i]
        c = cycles[ci] if ci >= 0 else None
        seat = 0.0
        if c is not None and c["seated"]:
            sit_f = SIT_TRANSITION_S * fps
            seat = float(min(_ease((i - c["start"]) / sit_f), _ease((c["end"] - i) / sit_f)))
        in_gesture = c is not None and c["lead"] <= i <= c["done"]
        moving = c is None or (not c["seated"] and not (c["lead"] - 3 <= i <= c["done"] + 2))

        if in_gesture and (gesture is None or gesture["cycle"] != ci):
            # plan the gesture from the current state
            probe_sh = body.shoulder(root, yaw, seat, side)
            cands = _visible_markers(room, probe_sh)
            if not cands:
                cands = [min(room.markers, key=lambda m: -np.linalg.norm(room.markers[m] - probe_sh))]
            mid = cands[int(rng.integers(len(cands)))]
            mpos = room.markers[mid]
            to_m = mpos - probe_sh
            target_yaw = np.arctan2(to_m[1], to_m[0])
            delta = _wrap(target_yaw - yaw)
            turn = delta - np.clip(delta, -MAX_ARM_YAW, MAX_ARM_YAW) * rng.uniform(0.6, 1.0)
            final_yaw = yaw + turn
            # iterate: shoulder moves with the body turn
            for _ in range(3):
                sh = body.shoulder(root, final_yaw, seat, side)
                to_m = mpos - sh
                delta = _wrap(np.arctan2(to_m[1], to_m[0]) - final_yaw)
                if abs(delta) > MAX_ARM_YAW + 1e-3:
                    final_yaw += delta - np.sign(delta) * MAX_ARM_YAW
            gesture = {"cycle": ci, "marker": mid, "pos": mpos, "yaw0": yaw, "yaw1": final_yaw}

        head_dir = np.array([np.cos(yaw), np.sin(yaw), -0.15])
        arm_dir = None
        if in_gesture:
            g = gesture
            tr = _ease((i - c["raise"]) / max(1, c["hold"] - c["raise"]))
            yaw = g["yaw0"] + _wrap(g["yaw1"] - g["yaw0"]) * tr
            sh = body.shoulder(root, yaw, seat, side)
            point_dir = dir_between(sh, g["pos"])
            if i < c["hold"]:
                arm_dir = _slerp(_rest_dir(yaw), point_dir, tr)
                head_s = _ease((i - c["lead"]) / max(1, c["hold"] - c["lead"]))
            elif i < c["lower"]:
                arm_dir = point_dir
                head_s = 1.0
            else:
                tl = _ease((i - c["lower"] + 1) / max(1, c["done"] - c["lower"] + 2))
                arm_dir = _slerp(point_dir, _rest_dir(yaw), tl)
                head_s = 1.0 - tl
            head_c = sh + np.array([0.0, 0.0, body.neck])
            look = dir_between(head_c, g["pos"])
            head_dir = _slerp(head_dir / np.linalg.norm(head_dir), look, actor.head_turn_gain * head_s)
        elif moving:
            to_w = waypoint - root
            dist = np.linalg.norm(to_w)
            if dist < 0.15:
                for _ in range(20):
                    cand = _free_point(room, rng)
                    if _path_clear(room, root, cand):
                        break
                waypoint = cand
                to_w = waypoint - root
                dist = np.linalg.norm(to_w)
            desired = np.arctan2(to_w[1], to_w[0])
            dyaw = _wrap(desired - yaw)
            yaw = _wrap(yaw + np.clip(dyaw, -np.pi * dt, np.pi * dt))
            speed = actor.gait_speed * max(0.0, np.cos(dyaw))
            step = min(speed * dt, dist)
            root = root + step * np.array([np.cos(yaw), np.sin(yaw)])
            walk_phase += 2 * np.pi * step / stride
        walk_amp = 0.35 if moving and not in_gesture else 0.0

        skeletons[i] = body.joints(root, yaw, seat, walk_phase, walk_amp, head_dir, arm_dir)
        seated_arr[i] = seat
        if in_gesture and c["hold"] <= i < c["lower"]:
            is_pointing[i] = True
            directions[i] = dir_between(skeletons[i, wrist_index(side)], gesture["pos"])
            marker_ids[i] = gesture["marker"]
        if c is not None and i == c["hold"]:
            intervals.append((c["hold"], c["lower"] - 1))
            utterances.append((c["hold"], gesture["marker"]))

    events = EventLog(intervals, utterances)
    events.validate()
    return SessionTruth(session_id, room.room_id, actor.actor_id, fps, skeletons, events,
                        is_pointing, directions, marker_ids, side, seated_arr)


def emit_events(truth: SessionTruth) -> EventLog:
    """Button presses and marker utterances recorded during the session."""
    return EventLog(list(truth.events.button_intervals), list(truth.events.utterances))
