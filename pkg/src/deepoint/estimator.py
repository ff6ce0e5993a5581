"""scikit-learn style wrappers around the window pipeline and the network.

``X`` is the packed window array ``(n, W, PACKED_DIM)`` produced by
:class:`TrackWindower` or :meth:`WindowDataset.packed`; ``y`` holds binary
pointing labels and ``directions`` unit 3-vectors (NaN where unknown).
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from .evalkit import frame_prf, mean_angular_error
from .model import ModelConfig
from .trainer import Checkpoint, TrainConfig, fit_windows, predict_windows
from .windows import PACKED_DIM, WindowDataset, unpack


def check_packed(X, window: int | None = None) -> np.ndarray:
    """Validate a packed window array and return it as float64."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 3 or X.shape[2] != PACKED_DIM:
        raise ValueError(f"expected shape (n, W, {PACKED_DIM}), got {X.shape}")
    if window is not None and X.shape[1] != window:
        raise ValueError(f"expected window length {window}, got {X.shape[1]}")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if not np.isin(y, (0, 1, True, False)).all():
        raise ValueError("labels must be binary")
    return y.astype(bool)


def check_directions(d, n: int) -> np.ndarray:
    """(n, 3) unit vectors; NaN rows mark missing labels."""
    d = check_array(d, dtype=np.float64, ensure_all_finite="allow-nan")
    if d.shape != (n, 3):
        raise ValueError(f"directions must have shape ({n}, 3), got {d.shape}")
    ok = np.isfinite(d).all(axis=1)
    norms = np.linalg.norm(d[ok], axis=1)
    if ok.any() and np.abs(norms - 1).max() > 1e-6:
        raise ValueError("directions must be unit vectors")
    return d


class _ArrayWindows:
    """Minimal window source over packed arrays for the training loop."""

    def __init__(self, X, y, directions):
        self.X = X
        self.pointing = y
        self.directions = directions
        self.n_frames = len(X)

    def __len__(self):
        return len(self.X)

    def batch(self, idx, dtype=torch.float32):
        idx = np.asarray(idx)
        b = unpack(self.X[idx], dtype)
        d = self.directions[idx]
        b["y_point"] = torch.as_tensor(self.pointing[idx])
        b["y_dir"] = torch.as_tensor(np.nan_to_num(d)).to(dtype)
        b["has_dir"] = torch.as_tensor(np.isfinite(d).all(axis=1))
        return b


class TrackWindower(TransformerMixin, BaseEstimator):
    """Turn pose tracks into packed causal windows (one per valid frame)."""

    def __init__(self, window: int = 5):
        self.window = window

    def fit(self, tracks=None, y=None):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        self.n_features_out_ = PACKED_DIM
        return self

    def transform(self, tracks) -> np.ndarray:
        check_is_fitted(self, "n_features_out_")
        wd = WindowDataset(self.window)
        for i, tr in enumerate(tracks):
            T = tr.n_frames
            wd.add_track(str(i), tr.camera_id, tr, {"pointing": np.zeros(T, bool), "direction": np.full((T, 3), np.nan)})
        if len(wd) == 0:
            return np.zeros((0, self.window, PACKED_DIM))
        return wd.packed()


class DeePointEstimator(ClassifierMixin, BaseEstimator):
    """Pointing detector and direction regressor.

    ``predict`` returns binary pointing labels, ``predict_proba`` class
    probabilities ordered ``[not pointing, pointing]`` and
    ``predict_direction`` unit vectors in the camera frame.
    """

    def __init__(self, embed_dim=32, joint_layers=2, temporal_layers=2, heads=4, window=5, variant="DP",
                 ablation="none", learning_rate=1e-3, batch_size=16, loss_weight=1.0, direction_loss="arccos",
                 max_epochs=20, patience=5, steps_per_epoch=None, validation_fraction=0.15, threshold=0.5,
                 random_state=0):
        self.embed_dim = embed_dim
        self.joint_layers = joint_layers
        self.temporal_layers = temporal_layers
        self.heads = heads
        self.window = window
        self.variant = variant
        self.ablation = ablation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.loss_weight = loss_weight
        self.direction_loss = direction_loss
        self.max_epochs = max_epochs
        self.patience = patience
        self.steps_per_epoch = steps_per_epoch
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.random_state = random_state

    def _train_config(self, seed: int) -> TrainConfig:
        mc = ModelConfig(embed_dim=self.embed_dim, joint_layers=self.joint_layers,
                         temporal_layers=self.temporal_layers, heads=self.heads, window=self.window,
                         variant=self.variant, ablation=self.ablation)
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, loss_weight=self.loss_weight,
                           direction_loss=self.direction_loss, max_epochs=self.max_epochs, patience=self.patience,
                           seed=seed, steps_per_epoch=self.steps_per_epoch, model=mc)

    def fit(self, X, y, directions=None, X_val=None, y_val=None, directions_val=None):
        X = check_packed(X, self.window)
        y = check_labels(y, len(X))
        d = np.full((len(X), 3), np.nan) if directions is None else check_directions(directions, len(X))
        seed = int(check_random_state(self.random_state).randint(2**31 - 1))
        if X_val is None:
            # held-out tail, no shuffling: windows overlap in time
            k = max(1, int(round(len(X) * self.validation_fraction)))
            X, X_val, y, y_val, d, d_val = X[:-k], X[-k:], y[:-k], y[-k:], d[:-k], d[-k:]
        else:
            X_val = check_packed(X_val, self.window)
            y_val = check_labels(y_val, len(X_val))
            d_val = (np.full((len(X_val), 3), np.nan) if directions_val is None
                     else check_directions(directions_val, len(X_val)))
        cfg = self._train_config(seed)
        self.checkpoint_ = fit_windows(_ArrayWindows(X, y, d), _ArrayWindows(X_val, y_val, d_val), cfg)
        self.model_ = self.checkpoint_.model()
        self.classes_ = np.array([False, True])
        self.n_features_in_ = PACKED_DIM
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "DeePointEstimator":
        mc = ckpt.model_config
        est = cls(embed_dim=mc.embed_dim, joint_layers=mc.joint_layers, temporal_layers=mc.temporal_layers,
                  heads=mc.heads, window=mc.window, variant=mc.variant, ablation=mc.ablation)
        est.checkpoint_ = ckpt
        est.model_ = ckpt.model()
        est.classes_ = np.array([False, True])
        est.n_features_in_ = PACKED_DIM
        return est

    def _predict(self, X):
        check_is_fitted(self, "model_")
        X = check_packed(X, self.window)
        return predict_windows(self.model_, _ArrayWindows(X, np.zeros(len(X), bool), np.full((len(X), 3), np.nan)))

    def predict_proba(self, X) -> np.ndarray:
        p, _ = self._predict(X)
        return np.stack([1 - p, p], axis=1)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1] >= self.threshold

    def predict_direction(self, X) -> np.ndarray:
        return self._predict(X)[1]

    def score(self, X, y, sample_weight=None) -> float:
        """Frame-level F1 of the pointing detector."""
        y = check_labels(y, len(X))
        return frame_prf(self.predict_proba(X)[:, 1], y, self.threshold).f1

    def direction_error(self, X, directions) -> float:
        d = check_directions(directions, len(X))
        return mean_angular_error(self.predict_direction(X), d)
