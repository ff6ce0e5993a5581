"""Temporal (T), scene (S) and person (P) dataset partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import InsufficientDiversity

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)
DEFAULT_PERSON_RATIO = (25, 4, 4)


@dataclass
class SplitAssignment:
    """``splits[name]`` is a list of ``(session_id, first_frame, last_frame)``."""

    mode: str
    splits: dict[str, list[tuple[str, int, int]]] = field(default_factory=dict)

    def ranges(self, name: str):
        return self.splits.get(name, [])

    def sessions(self, name: str) -> set[str]:
        return {s for s, _, _ in self.ranges(name)}

    def n_frames(self, name: str) -> int:
        return sum(e - s + 1 for _, s, e in self.ranges(name))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            **{k: [{"session": s, "start": int(a), "end": int(b)} for s, a, b in v] for k, v in self.splits.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(
            d["mode"],
            {k: [(r["session"], int(r["start"]), int(r["end"])) for r in d.get(k, [])] for k in SPLIT_NAMES},
        )


def apportion(n: int, ratio) -> list[int]:
    """Largest-remainder apportionment of ``n`` items by ``ratio``.

    Every share gets at least one item when ``n >= len(ratio)``.
    """
    # exact arithmetic so tied remainders break by position, not rounding
    total = sum(Fraction(r) for r in ratio)
    quota = [n * Fraction(r) / total for r in ratio]
    counts = np.array([math.floor(q) for q in quota])
    order = sorted(range(len(quota)), key=lambda i: -(quota[i] - counts[i]))
    for i in order[: n - int(counts.sum())]:
        counts[i] += 1
    if n >= len(ratio):
        # take from the largest share to fill empty ones
        while (counts == 0).any():
            counts[np.argmax(counts)] -= 1
            counts[np.argmin(counts)] += 1
    return counts.tolist()


def _temporal_cuts(n_frames, fractions):
    c = np.cumsum(fractions) / np.sum(fractions)
    a = int(round(n_frames * c[0]))
    b = int(round(n_frames * c[1]))
    return a, b


def make_splits(sessions, mode: str, fractions=DEFAULT_FRACTIONS, person_ratio=DEFAULT_PERSON_RATIO,
                train_room: str | None = None, seed: int = 0) -> SplitAssignment:
    """Partition sessions.

    ``sessions`` items need ``session_id``, ``room_id``, ``actor_id`` and
    ``n_frames``. Mode T cuts every session 70/15/15 along time; mode S
    trains on ``train_room`` (default: first room in sorted order) and cuts
    the other rooms' sessions in half along time for val/test; mode P
    assigns whole actors to one split by largest-remainder apportionment
    of ``person_ratio``.
    """
    mode = mode.upper()
    out = {k: [] for k in SPLIT_NAMES}
    if mode == "T":
        for s in sessions:
            a, b = _temporal_cuts(s.n_frames, fractions)
            out["train"].append((s.session_id, 0, a - 1))
            out["val"].append((s.session_id, a, b - 1))
            out["test"].append((s.session_id, b, s.n_frames - 1))
    elif mode == "S":
        rooms = sorted({s.room_id for s in sessions})
        if len(rooms) < 2:
            raise InsufficientDiversity(f"scene split needs at least 2 rooms, got {rooms}")
        train_room = train_room or rooms[0]
        if train_room not in rooms:
            raise InsufficientDiversity(f"train room {train_room!r} has no sessions")
        for s in sessions:
            if s.room_id == train_room:
                out["train"].append((s.session_id, 0, s.n_frames - 1))
            else:
                half = s.n_frames // 2
                out["val"].append((s.session_id, 0, half - 1))
                out["test"].append((s.session_id, half, s.n_frames - 1))
    elif mode == "P":
        actors = sorted({s.actor_id for s in sessions})
        if len(actors) < 3:
            raise InsufficientDiversity(f"person split needs at least 3 actors, got {len(actors)}")
        order = [actors[i] for i in np.random.default_rng(seed).permutation(len(actors))]
        counts = apportion(len(actors), person_ratio)
        owner = {}
        k = 0
        for name, c in zip(SPLIT_NAMES, counts):
            for a in order[k:k + c]:
                owner[a] = name
            k += c
        for s in sessions:
            out[owner[s.actor_id]].append((s.session_id, 0, s.n_frames - 1))
    else:
        raise ValueError(f"unknown split mode {mode!r}; expected T, S or P")
    return SplitAssignment(mode, out)
