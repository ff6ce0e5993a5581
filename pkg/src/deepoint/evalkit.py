"""Detection and direction metrics, error maps, geometric baselines and the
ablation runner."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateGeometry, EmptyInput, InsufficientViews, MissingJoint, NoEvaluableFrames, NoInstances
from .geometry3d import angular_error, dir_between, dir_to_yaw_pitch, mollweide, triangulate
from .skeleton import JOINT_INDEX

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
DEFAULT_BIN_DEG = 15.0

# reference values printed beside desk-scale ablation tables (DP, Split-T)
REFERENCE_WINDOW_ERRORS = {1: 17.08, 15: 14.05}


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    tp: int = 0
    fp: int = 0
    fn: int = 0


def frame_prf(pred_p, gts, threshold: float = DEFAULT_THRESHOLD) -> PRF:
    """Frame-level precision/recall/F1 with decision ``p >= threshold``.

    With no positive predictions precision is reported as 0 and
    ``precision_defined`` is False; likewise recall is 0 with no positives.
    """
    pred_p = np.asarray(pred_p, dtype=np.float64)
    gts = np.asarray(gts, dtype=bool)
    if pred_p.shape != gts.shape:
        raise ValueError(f"shape mismatch {pred_p.shape} vs {gts.shape}")
    if pred_p.size == 0:
        raise EmptyInput("no frames to score")
    pred = pred_p >= threshold
    tp = int(np.sum(pred & gts))
    fp = int(np.sum(pred & ~gts))
    fn = int(np.sum(~pred & gts))
    defined = tp + fp > 0
    precision = tp / (tp + fp) if defined else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return PRF(precision, recall, f1, defined, tp, fp, fn)


def instance_recall(pred_p, instances, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of instances with at least one frame at ``p >= threshold``.

    ``instances`` is a list of objects with ``start_frame``/``end_frame`` or
    plain ``(start, end)`` pairs indexing into ``pred_p``.
    """
    detected, total = instance_hits(pred_p, instances, threshold)
    if total == 0:
        raise NoInstances("no pointing instances to score")
    return detected / total


def instance_hits(pred_p, instances, threshold: float = DEFAULT_THRESHOLD) -> tuple[int, int]:
    pred_p = np.asarray(pred_p)
    hit = 0
    for inst in instances:
        s, e = (inst.start_frame, inst.end_frame) if hasattr(inst, "start_frame") else inst
        if not 0 <= s <= e < len(pred_p):
            raise ValueError(f"instance [{s}, {e}] outside the sequence of {len(pred_p)} frames")
        hit += bool(np.any(pred_p[s:e + 1] >= threshold))
    return hit, len(instances)


def mean_angular_error(pred_nu, gts) -> float:
    """Mean angle (degrees) over rows where the ground truth is finite."""
    pred_nu = np.asarray(pred_nu, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    ok = np.isfinite(gts).all(axis=-1)
    if not ok.any():
        raise NoEvaluableFrames("no frames carry a ground-truth direction")
    return float(np.mean(angular_error(pred_nu[ok], gts[ok])))


@dataclass
class ErrorMap:
    """Mean angular error binned by ground-truth (yaw, pitch).

    ``mean`` and ``count`` are ``(n_pitch, n_yaw)``; empty bins hold NaN.
    ``x``/``y`` are Mollweide coordinates of the bin centers.
    """

    yaw_edges: np.ndarray
    pitch_edges: np.ndarray
    mean: np.ndarray
    count: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def records(self):
        for i in range(self.count.shape[0]):
            for j in range(self.count.shape[1]):
                yield {
                    "yaw_lo": float(self.yaw_edges[j]), "yaw_hi": float(self.yaw_edges[j + 1]),
                    "pitch_lo": float(self.pitch_edges[i]), "pitch_hi": float(self.pitch_edges[i + 1]),
                    "count": int(self.count[i, j]),
                    "mean_error": None if self.count[i, j] == 0 else float(self.mean[i, j]),
                    "x": float(self.x[i, j]), "y": float(self.y[i, j]),
                }


def direction_histogram(gts, bin_deg: float = DEFAULT_BIN_DEG, values=None) -> ErrorMap:
    gts = np.asarray(gts, dtype=np.float64)
    ok = np.isfinite(gts).all(axis=-1)
    yaw, pitch = dir_to_yaw_pitch(gts[ok])
    yaw = np.atleast_1d(yaw)
    pitch = np.atleast_1d(pitch)
    n_yaw = int(round(360 / bin_deg))
    n_pitch = int(round(180 / bin_deg))
    yaw_edges = np.linspace(-180, 180, n_yaw + 1)
    pitch_edges = np.linspace(-90, 90, n_pitch + 1)
    yi = np.clip(np.searchsorted(yaw_edges, yaw, side="right") - 1, 0, n_yaw - 1)
    pi = np.clip(np.searchsorted(pitch_edges, pitch, side="right") - 1, 0, n_pitch - 1)
    count = np.zeros((n_pitch, n_yaw), dtype=np.int64)
    total = np.zeros((n_pitch, n_yaw))
    np.add.at(count, (pi, yi), 1)
    if values is not None:
        np.add.at(total, (pi, yi), np.asarray(values, dtype=np.float64)[ok])
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    yc = np.radians(0.5 * (yaw_edges[:-1] + yaw_edges[1:]))
    pc = np.radians(0.5 * (pitch_edges[:-1] + pitch_edges[1:]))
    Y, P = np.meshgrid(yc, pc)
    x, y = mollweide(Y, P)
    return ErrorMap(yaw_edges, pitch_edges, mean, count, np.asarray(x), np.asarray(y))


def direction_error_map(pred, gts, bin_deg: float = DEFAULT_BIN_DEG) -> ErrorMap:
    """Per-bin mean error. ``gts`` must be world-frame if yaw/pitch are to
    carry the z-up meaning; any consistent frame works for the binning."""
    pred = np.asarray(pred, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    ok = np.isfinite(gts).all(axis=-1)
    if not ok.any():
        raise NoEvaluableFrames("no frames carry a ground-truth direction")
    err = np.full(len(gts), np.nan)
    err[ok] = angular_error(pred[ok], gts[ok])
    return direction_histogram(gts, bin_deg, err)


def baseline_direction(joints, kind: str = "elbow_hand", side: str = "right") -> np.ndarray:
    """Geometric pointing baselines from 3D joints: elbow->wrist or nose->wrist.

    ``joints`` is a (17, 3) array (NaN rows = missing) or a name->point dict.
    """
    def get(name):
        if isinstance(joints, dict):
            if name not in joints or joints[name] is None:
                raise MissingJoint(name)
            p = np.asarray(joints[name], dtype=np.float64)
        else:
            p = np.asarray(joints[JOINT_INDEX[name]], dtype=np.float64)
        if not np.isfinite(p).all():
            raise MissingJoint(name)
        return p

    wrist = get(f"{side}_wrist")
    if kind == "elbow_hand":
        start = get(f"{side}_elbow")
    elif kind == "nose_hand":
        start = get("nose")
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    return dir_between(start, wrist)


def baseline_report(dataset) -> dict:
    """Mean error of the geometric baselines and of the annotation itself,
    all against simulator truth, over annotated pointing frames."""
    errs = {"elbow_hand": [], "nose_hand": [], "annotation": []}
    for sid, sess in dataset.sessions.items():
        truth = sess.truth
        side = truth.dominant_side
        for f in dataset.annotations.get(sid, []):
            if not f.has_direction:
                continue
            gt = truth.directions[f.frame_index]
            errs["annotation"].append(float(angular_error(f.world_direction, gt)))
            joints = {}
            for name in ("nose", f"{side}_elbow", f"{side}_wrist"):
                obs = [tr.observation(f.frame_index, JOINT_INDEX[name]) for tr in sess.tracks.values()]
                try:
                    joints[name] = triangulate(obs, sess.room.camera_map).point
                except (InsufficientViews, DegenerateGeometry):
                    joints[name] = None
            for kind in ("elbow_hand", "nose_hand"):
                try:
                    d = baseline_direction(joints, kind, side)
                except MissingJoint:
                    continue
                errs[kind].append(float(angular_error(d, gt)))
    return {k: {"mean_error_deg": float(np.mean(v)) if v else None, "frames": len(v)} for k, v in errs.items()}


@dataclass
class MetricsReport:
    angular_error: float
    precision: float
    recall: float
    f1: float
    instance_recall: float
    counts: dict = field(default_factory=dict)
    precision_defined: bool = True
    error_map: ErrorMap | None = None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "error_map"}
        return d

    def table(self) -> str:
        return (f"angular error {self.angular_error:.2f} deg | precision {self.precision:.3f} | "
                f"recall {self.recall:.3f} | F1 {self.f1:.3f} | instance recall {self.instance_recall:.3f}")


def evaluate_predictions(p, nu, gts_point, gts_dir, sequences=None, threshold: float = DEFAULT_THRESHOLD,
                         world_gts=None, world_pred=None, bin_deg: float = DEFAULT_BIN_DEG) -> MetricsReport:
    """Assemble a :class:`MetricsReport`.

    ``sequences`` is an iterable of ``(frame_indices_into_arrays, instance_ids)``
    used for instance recall; each distinct non-negative instance id within
    a sequence is one instance.
    """
    prf = frame_prf(p, gts_point, threshold)
    ang = mean_angular_error(nu, gts_dir) if np.isfinite(np.asarray(gts_dir)).all(axis=-1).any() else float("nan")
    hits = total = 0
    if sequences is not None:
        for idx, inst in sequences:
            for k in np.unique(inst[inst >= 0]):
                total += 1
                hits += bool(np.any(np.asarray(p)[idx][inst == k] >= threshold))
    inst_rec = hits / total if total else float("nan")
    emap = None
    if world_gts is not None and world_pred is not None and np.isfinite(world_gts).all(axis=-1).any():
        emap = direction_error_map(world_pred, world_gts, bin_deg)
    counts = {"frames": int(len(p)), "positives": int(np.sum(gts_point)),
              "evaluable": int(np.isfinite(np.asarray(gts_dir)).all(axis=-1).sum()),
              "instances": total, "tp": prf.tp, "fp": prf.fp, "fn": prf.fn}
    return MetricsReport(ang, prf.precision, prf.recall, prf.f1, inst_rec, counts, prf.precision_defined, emap)


def evaluate_model(model, windows, batch_size: int = 512, threshold: float = DEFAULT_THRESHOLD,
                   with_map: bool = False) -> MetricsReport:
    """Run ``model`` over a :class:`~deepoint.windows.WindowDataset`."""
    from .trainer import predict_windows

    p, nu = predict_windows(model, windows, batch_size)
    ti, frame, inst = windows.sample_info()
    seqs = []
    for t in np.unique(ti):
        idx = np.nonzero(ti == t)[0]
        seqs.append((idx, inst[idx]))
    world_pred = None
    if with_map:
        world_pred = _camera_to_world(nu, windows, ti)
    return evaluate_predictions(p, nu, windows.pointing, windows.directions, seqs, threshold,
                                windows.world_directions if with_map else None, world_pred)


def _camera_to_world(nu, windows, ti):
    cams = getattr(windows, "cameras", None)
    if not cams:
        return None
    out = np.empty_like(nu)
    for t in np.unique(ti):
        ref = windows.refs[t]
        R = cams[(ref.session_id, ref.camera_id)].rotation
        sel = ti == t
        out[sel] = nu[sel] @ R
    return out


# ---------------------------------------------------------------- ablations


@dataclass
class AblationRow:
    name: str
    params: dict
    metrics: MetricsReport | None
    error: str | None = None
    reference: float | None = None


@dataclass
class AblationTable:
    title: str
    rows: list[AblationRow]

    def format(self) -> str:
        lines = [self.title, f"{'setting':<28}{'angular err':>12}{'precision':>11}{'recall':>9}{'reference':>11}"]
        for r in self.rows:
            ref = f"{r.reference:.2f}" if r.reference is not None else "-"
            if r.metrics is None:
                lines.append(f"{r.name:<28}{'FAILED':>12}{'':>11}{'':>9}{ref:>11}  {r.error}")
            else:
                m = r.metrics
                lines.append(f"{r.name:<28}{m.angular_error:>12.2f}{m.precision:>11.3f}{m.recall:>9.3f}{ref:>11}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        out = []
        for r in self.rows:
            rec = {"name": r.name, "params": r.params, "error": r.error, "reference": r.reference}
            if r.metrics is not None:
                rec.update(r.metrics.to_dict())
            out.append(rec)
        return out

    def to_json(self) -> str:
        return json.dumps({"title": self.title, "rows": self.records()}, indent=1, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and math.isnan(o):
        return None
    raise TypeError(type(o))


WINDOW_GRID = (1, 5, 15, 30)
APPENDIX_GRID = (
    ("DP", {}),
    ("DP w/o TE", {"ablation": "no_temporal_encoder"}),
    ("DP-Hand", {"ablation": "body_part_mask:hand"}),
    ("DP-Hand&Head", {"ablation": "body_part_mask:hand_head"}),
)


def ablation_cells(kind: str, values=None):
    """Named cells for a grid kind: ``window``, ``appendix``, ``body_parts``,
    ``no_temporal_encoder`` or ``variant``. Each cell is (name, model overrides)."""
    if kind == "window":
        return [(f"N={n}", {"window": int(n)}) for n in (values or WINDOW_GRID)]
    if kind == "appendix":
        return list(APPENDIX_GRID)
    if kind == "body_parts":
        sets = values or ("hand", "hand_head")
        return [("DP", {})] + [(f"DP-{s}", {"ablation": f"body_part_mask:{s}"}) for s in sets]
    if kind == "no_temporal_encoder":
        return [("DP", {}), ("DP w/o TE", {"ablation": "no_temporal_encoder"})]
    if kind == "variant":
        return [(v, {"variant": v}) for v in (values or ("DP", "DP-B", "DP-BI"))]
    raise ValueError(f"unknown ablation grid {kind!r}")


def run_ablation(grid, base_config, dataset, title: str | None = None, test_split: str = "test") -> AblationTable:
    """Train and evaluate one model per cell with shared seeds.

    ``grid`` is a grid kind accepted by :func:`ablation_cells`, a
    ``(kind, values)`` pair, or an explicit list of ``(name, overrides)``.
    Failed cells are recorded and the run continues.
    """
    from .trainer import train
    from .windows import build_windows

    if isinstance(grid, str):
        cells, kind = ablation_cells(grid), grid
    elif isinstance(grid, tuple) and len(grid) == 2 and isinstance(grid[0], str):
        cells, kind = ablation_cells(*grid), grid[0]
    else:
        cells, kind = list(grid), "custom"
    rows = []
    for name, overrides in cells:
        ref = None
        if kind == "window" and base_config.model.variant == "DP" and base_config.model.ablation == "none":
            ref = REFERENCE_WINDOW_ERRORS.get(overrides.get("window"))
        try:
            cfg = base_config.with_model(**overrides)
            ckpt = train(dataset, dataset.splits, cfg)
            test = build_windows(dataset, test_split, cfg.model.tokens_per_window)
            metrics = evaluate_model(ckpt.model(), test)
            rows.append(AblationRow(name, overrides, metrics, None, ref))
        except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.exception("ablation cell %s failed", name)
            rows.append(AblationRow(name, overrides, None, f"{type(exc).__name__}: {exc}", ref))
    return AblationTable(title or f"Ablation: {kind}", rows)
