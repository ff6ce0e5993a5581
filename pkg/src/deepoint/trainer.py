"""Supervised training: balanced sampling, composite loss, Adam, early
stopping and validation-based checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch.nn import functional as F

from .errors import NonFiniteLoss, SingleClassDataset
from .evalkit import frame_prf, mean_angular_error
from .model import DeePointNet, ModelConfig, PointingOutput

log = logging.getLogger(__name__)

COS_CLAMP = 1 - 1e-7
CHECKPOINT_FORMAT = "deepoint-checkpoint-v1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    loss_weight: float = 1.0
    direction_loss: str = "arccos"
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    split: str = "T"
    steps_per_epoch: int | None = None
    time_budget_s: float | None = None
    val_max_samples: int | None = 20000
    dtype: str = "float32"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be non-negative")
        if self.direction_loss not in ("arccos", "cosine"):
            raise ValueError("direction_loss must be 'arccos' or 'cosine'")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def with_model(self, **kw) -> "TrainConfig":
        return replace(self, model=self.model.with_(**kw))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        return cls(**d)

    @classmethod
    def toy(cls, **kw) -> "TrainConfig":
        """Desk-scale preset: d=32, 2+2 layers, N=5, batch 16."""
        base = dict(learning_rate=1e-3, batch_size=16, model=ModelConfig.toy())
        base.update(kw)
        return cls(**base)


# ---------------------------------------------------------------- loss


def direction_term(nu, target, mode: str = "arccos"):
    cos = (nu * target).sum(dim=-1)
    if mode == "cosine":
        return 1.0 - cos
    return torch.acos(cos.clamp(-COS_CLAMP, COS_CLAMP))


def loss(output: PointingOutput, y_point, y_dir, has_dir, loss_weight: float = 1.0, mode: str = "arccos"):
    """Mean over the batch of ``CE + loss_weight * angle * [pointing & has_dir]``.

    The pointing class is logit index 0. Returns ``(total, parts)`` where
    ``parts`` holds the detached CE and direction means and the number of
    pointing frames skipped for lack of a direction label.
    """
    target = (~y_point.bool()).long()
    ce = F.cross_entropy(output.logits, target, reduction="none")
    use = y_point.bool() & has_dir.bool()
    ang = direction_term(output.nu, y_dir, mode)
    d = torch.where(use, ang, torch.zeros((), dtype=ang.dtype))
    total = (ce + loss_weight * d).mean()
    parts = {
        "ce": float(ce.mean().detach()),
        "direction": float(d.sum().detach() / max(int(use.sum()), 1)),
        "skipped": int((y_point.bool() & ~has_dir.bool()).sum()),
    }
    return total, parts


# ---------------------------------------------------------------- sampling


def balanced_batches(labels, batch_size: int, seed: int):
    """Endless stream of index batches with a 1:1 expected class ratio.

    Each slot picks a class with probability 1/2, then a uniform member of
    that class (with replacement).
    """
    labels = np.asarray(labels, dtype=bool)
    pos = np.nonzero(labels)[0]
    neg = np.nonzero(~labels)[0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassDataset("balanced sampling needs both pointing and non-pointing frames")
    rng = np.random.default_rng(seed)
    while True:
        cls = rng.uniform(size=batch_size) < 0.5
        pick = np.where(cls, pos[rng.integers(len(pos), size=batch_size)], neg[rng.integers(len(neg), size=batch_size)])
        yield pick


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    parameters: dict
    model_config: ModelConfig
    train_config: TrainConfig | None = None
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def model(self, dtype=None) -> DeePointNet:
        net = DeePointNet(self.model_config)
        stored = next(iter(self.parameters.values()), None)
        if stored is not None and np.asarray(stored).dtype == np.float64:
            net = net.double()
        net.load_state_dict({k: torch.as_tensor(v) for k, v in self.parameters.items()})
        if dtype is not None:
            net = net.to(dtype)
        net.eval()
        return net

    def save(self, path) -> Path:
        """``.npz`` with a JSON ``__meta__`` entry and one array per named parameter."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": CHECKPOINT_FORMAT,
            "model_config": self.model_config.to_dict(),
            "train_config": None if self.train_config is None else self.train_config.to_dict(),
            "epoch": self.epoch,
            "metrics": self.metrics,
            "history": self.history,
        }
        arrays = {f"param/{k}": np.asarray(v) for k, v in self.parameters.items()}
        with path.open("wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
            params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        tc = None if meta["train_config"] is None else TrainConfig.from_dict(meta["train_config"])
        return cls(params, ModelConfig.from_dict(meta["model_config"]), tc, meta["epoch"], meta["metrics"],
                   meta.get("history", []))


def snapshot(net) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in net.state_dict().items()}


# ---------------------------------------------------------------- loop


@torch.no_grad()
def predict_windows(net, windows, batch_size: int = 512, idx=None):
    """Probabilities (n,) and unit directions (n, 3) for window samples."""
    net.eval()
    dtype = next(net.parameters()).dtype
    idx = np.arange(len(windows)) if idx is None else np.asarray(idx)
    ps, nus = [], []
    for s in range(0, len(idx), batch_size):
        b = windows.batch(idx[s:s + batch_size], dtype)
        out = net(b)
        ps.append(out.p.cpu().numpy())
        nus.append(out.nu.cpu().numpy())
    if not ps:
        return np.zeros(0), np.zeros((0, 3))
    return np.concatenate(ps).astype(np.float64), np.concatenate(nus).astype(np.float64)


def validation_metrics(net, windows, idx=None, batch_size: int = 512) -> dict:
    idx = np.arange(len(windows)) if idx is None else idx
    p, nu = predict_windows(net, windows, batch_size, idx)
    prf = frame_prf(p, windows.pointing[idx])
    gts = np.where(windows.pointing[idx][:, None], windows.directions[idx], np.nan)
    try:
        ang = mean_angular_error(nu, gts)
    except Exception:  # noqa: BLE001 - no evaluable frames
        ang = float("nan")
    return {"angular_error": ang, "precision": prf.precision, "recall": prf.recall, "f1": prf.f1}


def fit_windows(train_w, val_w, cfg: TrainConfig, log_path=None, net: DeePointNet | None = None,
                callback=None) -> Checkpoint:
    """Core optimization loop on prepared :class:`WindowDataset` objects."""
    torch.manual_seed(cfg.seed)
    np.random.seed(cfg.seed & 0xFFFFFFFF)
    dtype = cfg.torch_dtype
    if net is None:
        net = DeePointNet(cfg.model)
    net = net.to(dtype)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    stream = balanced_batches(train_w.pointing, cfg.batch_size, cfg.seed)
    steps = cfg.steps_per_epoch or max(1, math.ceil(_frame_count(train_w) / cfg.batch_size))

    val_idx = np.arange(len(val_w))
    if cfg.val_max_samples is not None and len(val_idx) > cfg.val_max_samples:
        val_idx = np.sort(np.random.default_rng(cfg.seed).choice(len(val_idx), cfg.val_max_samples, replace=False))

    history = []
    best = None
    best_err = math.inf
    since_best = 0
    t0 = time.perf_counter()
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            net.train()
            sums = {"loss": 0.0, "ce": 0.0, "direction": 0.0, "skipped": 0}
            for _ in range(steps):
                b = train_w.batch(next(stream), dtype)
                out = net(b)
                total, parts = loss(out, b["y_point"], b["y_dir"], b["has_dir"], cfg.loss_weight, cfg.direction_loss)
                if not torch.isfinite(total):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}")
                opt.zero_grad()
                total.backward()
                opt.step()
                sums["loss"] += float(total.detach())
                sums["ce"] += parts["ce"]
                sums["direction"] += parts["direction"]
                sums["skipped"] += parts["skipped"]
            val = validation_metrics(net, val_w, val_idx)
            rec = {"epoch": epoch, "loss": sums["loss"] / steps, "ce": sums["ce"] / steps,
                   "direction": sums["direction"] / steps, "skipped": sums["skipped"],
                   "elapsed_s": time.perf_counter() - t0, **{f"val_{k}": v for k, v in val.items()}}
            history.append(rec)
            log.info("epoch %d loss %.4f val err %.2f F1 %.3f", epoch, rec["loss"], val["angular_error"], val["f1"])
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if callback is not None:
                callback(rec)
            err = val["angular_error"]
            if best is None or (math.isfinite(err) and err < best_err):
                best_err = err if math.isfinite(err) else best_err
                best = Checkpoint(snapshot(net), cfg.model, cfg, epoch, val)
                since_best = 0
            else:
                since_best += 1
            if since_best >= cfg.patience:
                break
            if cfg.time_budget_s is not None and time.perf_counter() - t0 > cfg.time_budget_s:
                break
    except NonFiniteLoss:
        if best is None:
            raise
        log.error("non-finite loss; returning last good checkpoint (epoch %d)", best.epoch)
    finally:
        if log_fh:
            log_fh.close()
    best.history = history
    return best


def _frame_count(windows) -> int:
    # distinct (session, frame) pairs, so extra cameras do not lengthen epochs
    if hasattr(windows, "n_frames"):
        return max(1, int(windows.n_frames))
    ti, frames, _ = windows.sample_info()
    sess = np.array([windows.refs[i].session_id for i in ti])
    return max(1, len(set(zip(sess.tolist(), frames.tolist()))))


def train(dataset, splits, cfg: TrainConfig, log_path=None, callback=None) -> Checkpoint:
    """Train on ``splits`` of an in-memory dataset; returns the epoch with the
    lowest validation angular error."""
    from .windows import build_windows

    if splits is not dataset.splits:
        dataset = type(dataset)(dataset.sessions, dataset.annotations, splits)
    W = cfg.model.tokens_per_window
    train_w = build_windows(dataset, "train", W)
    val_w = build_windows(dataset, "val", W)
    if len(train_w) == 0 or len(val_w) == 0:
        raise ValueError("train and val splits must be non-empty")
    return fit_windows(train_w, val_w, cfg, log_path, callback=callback)


def lambda_sweep(dataset, splits, cfg: TrainConfig, weights=(0.0, 0.3, 1.0, 3.0)) -> list[dict]:
    """Train once per direction-loss weight and report validation metrics."""
    rows = []
    for w in weights:
        ck = train(dataset, splits, replace(cfg, loss_weight=w))
        rows.append({"loss_weight": w, "epoch": ck.epoch, **ck.metrics})
    return rows
