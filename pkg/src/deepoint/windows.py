"""Causal frame windows over annotated per-camera pose tracks.

All tracks of a split are concatenated into flat arrays once; a sample is
(global frame index, first index of its split range). A window for sample
``g`` covers ``g - W + 1 .. g``; slots before the range start or on frames
without a detected person are padded (``valid = False``, zero features).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .skeleton import NUM_JOINTS
from .tokenizer import BODY_CONTEXT_DIM, DESCRIPTOR_DIM, IMAGE_CONTEXT_DIM, track_features

# packed per-frame layout used by the array interface
PACKED_FIELDS = (
    ("desc", NUM_JOINTS * DESCRIPTOR_DIM),
    ("relpos", NUM_JOINTS * 2),
    ("mask", NUM_JOINTS),
    ("body", BODY_CONTEXT_DIM),
    ("image", IMAGE_CONTEXT_DIM),
    ("valid", 1),
)
PACKED_DIM = sum(n for _, n in PACKED_FIELDS)


@dataclass
class TrackRef:
    session_id: str
    camera_id: str
    offset: int
    n_frames: int


class WindowDataset:
    """Window sampler over a set of (session, camera) tracks.

    ``labels`` per track: ``pointing`` (T,), ``direction`` (T, 3) camera-frame
    unit vectors (NaN when absent), ``world`` (T, 3), ``instance`` (T,).
    """

    def __init__(self, window: int):
        self.window = window
        self.cameras: dict = {}
        self.refs: list[TrackRef] = []
        self._parts: dict[str, list] = {k: [] for k in
                                        ("desc", "relpos", "mask", "body", "image", "valid", "pointing",
                                         "direction", "world", "instance")}
        self._samples: list[np.ndarray] = []
        self._starts: list[np.ndarray] = []
        self._total = 0
        self._frozen = False

    def add_track(self, session_id, camera_id, track, labels: dict, ranges=None) -> None:
        """Add a track; ``ranges`` is a list of inclusive (first, last) frames
        to draw samples from (default: the whole track)."""
        feats = track_features(track)
        T = track.n_frames
        off = self._total
        for k in ("desc", "relpos", "body", "image"):
            self._parts[k].append(feats[k].astype(np.float32))
        self._parts["mask"].append(feats["mask"])
        self._parts["valid"].append(feats["valid"])
        self._parts["pointing"].append(np.asarray(labels["pointing"], dtype=bool))
        self._parts["direction"].append(np.asarray(labels["direction"], dtype=np.float64))
        self._parts["world"].append(np.asarray(labels.get("world", np.full((T, 3), np.nan)), dtype=np.float64))
        self._parts["instance"].append(np.asarray(labels.get("instance", np.full(T, -1)), dtype=np.int64))
        for a, b in ranges if ranges is not None else [(0, T - 1)]:
            frames = np.arange(a, b + 1)
            frames = frames[feats["valid"][frames]]
            self._samples.append(off + frames)
            self._starts.append(np.full(len(frames), off + a))
        self.refs.append(TrackRef(session_id, camera_id, off, T))
        self._total += T
        self._frozen = False

    def _freeze(self):
        if self._frozen:
            return
        for k, parts in self._parts.items():
            setattr(self, "_" + k, np.concatenate(parts) if parts else np.zeros((0,)))
        self.samples = np.concatenate(self._samples) if self._samples else np.zeros(0, dtype=np.int64)
        self.starts = np.concatenate(self._starts) if self._starts else np.zeros(0, dtype=np.int64)
        self._frozen = True

    def __len__(self) -> int:
        self._freeze()
        return len(self.samples)

    @property
    def pointing(self) -> np.ndarray:
        self._freeze()
        return self._pointing[self.samples]

    @property
    def directions(self) -> np.ndarray:
        self._freeze()
        return self._direction[self.samples]

    @property
    def world_directions(self) -> np.ndarray:
        self._freeze()
        return self._world[self.samples]

    @property
    def has_direction(self) -> np.ndarray:
        return np.isfinite(self.directions).all(axis=1)

    def sample_info(self):
        """(track_ref_index, frame, instance) for every sample."""
        self._freeze()
        offs = np.array([r.offset for r in self.refs])
        ti = np.searchsorted(offs, self.samples, side="right") - 1
        return ti, self.samples - offs[ti], self._instance[self.samples]

    def window_indices(self, idx):
        self._freeze()
        g = self.samples[idx]
        W = self.window
        win = g[:, None] + np.arange(-W + 1, 1)[None]
        inside = win >= self.starts[idx][:, None]
        win = np.where(inside, win, g[:, None])
        valid = inside & self._valid[win]
        return win, valid

    def batch(self, idx, dtype=torch.float32) -> dict:
        idx = np.asarray(idx)
        win, valid = self.window_indices(idx)
        keep = valid[..., None]

        def gather(arr):
            x = arr[win]
            return torch.as_tensor(np.where(keep.reshape(keep.shape + (1,) * (x.ndim - 3)), x, 0)).to(dtype)

        mask = self._mask[win] & valid[..., None]
        g = self.samples[idx]
        return {
            "desc": gather(self._desc),
            "relpos": gather(self._relpos),
            "mask": torch.as_tensor(mask),
            "body": gather(self._body),
            "image": gather(self._image),
            "valid": torch.as_tensor(valid),
            "y_point": torch.as_tensor(self._pointing[g]),
            "y_dir": torch.as_tensor(np.nan_to_num(self._direction[g])).to(dtype),
            "has_dir": torch.as_tensor(np.isfinite(self._direction[g]).all(axis=1)),
        }

    def packed(self, idx=None) -> np.ndarray:
        """Windows as a dense ``(n, W, PACKED_DIM)`` float array."""
        if idx is None:
            idx = np.arange(len(self))
        b = self.batch(idx, torch.float64)
        n, W = b["valid"].shape
        cols = [b["desc"].reshape(n, W, -1), b["relpos"].reshape(n, W, -1), b["mask"].to(torch.float64),
                b["body"], b["image"], b["valid"].to(torch.float64)[..., None]]
        return torch.cat(cols, dim=-1).numpy()


def unpack(X: np.ndarray, dtype=torch.float32) -> dict:
    """Inverse of :meth:`WindowDataset.packed` for model input."""
    X = torch.as_tensor(X)
    n, W, _ = X.shape
    out = {}
    k = 0
    for name, size in PACKED_FIELDS:
        out[name] = X[..., k:k + size]
        k += size
    return {
        "desc": out["desc"].reshape(n, W, NUM_JOINTS, DESCRIPTOR_DIM).to(dtype),
        "relpos": out["relpos"].reshape(n, W, NUM_JOINTS, 2).to(dtype),
        "mask": out["mask"] > 0.5,
        "body": out["body"].to(dtype),
        "image": out["image"].to(dtype),
        "valid": out["valid"][..., 0] > 0.5,
    }


def session_labels(annotations, camera_id: str) -> dict:
    """Label arrays for one camera from a list of AnnotatedFrame."""
    T = len(annotations)
    pointing = np.zeros(T, dtype=bool)
    direction = np.full((T, 3), np.nan)
    world = np.full((T, 3), np.nan)
    instance = np.full(T, -1, dtype=np.int64)
    for f in annotations:
        pointing[f.frame_index] = f.is_pointing
        if f.instance_id is not None:
            instance[f.frame_index] = f.instance_id
        if f.world_direction is not None:
            world[f.frame_index] = f.world_direction
            direction[f.frame_index] = f.camera_directions[camera_id]
    return {"pointing": pointing, "direction": direction, "world": world, "instance": instance}


def build_windows(dataset, split: str, window: int, cameras=None) -> WindowDataset:
    """Windows for one split of a :class:`~deepoint.dataset.Dataset`."""
    wd = WindowDataset(window)
    for sid, a, b in dataset.splits.ranges(split):
        sess = dataset.sessions[sid]
        ann = dataset.annotations[sid]
        for cid, track in sess.tracks.items():
            if cameras is not None and cid not in cameras:
                continue
            wd.add_track(sid, cid, track, session_labels(ann, cid), [(a, b)])
            wd.cameras[(sid, cid)] = sess.room.camera(cid)
    return wd
