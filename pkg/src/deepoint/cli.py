"""Command-line entry point: ``deepoint <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DeePointError

log = logging.getLogger("deepoint")

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------- helpers


def _versions() -> dict:
    import scipy
    import sklearn
    import torch

    return {"deepoint": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__, "torch": torch.__version__}


def write_manifest(out_dir, args, extra=None) -> Path:
    """Record argv, parsed options, seeds and library versions next to the outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    doc = {"command": args.command, "argv": sys.argv[1:], "options": opts, "seed": args.seed,
           "workers": args.workers, "deterministic": args.deterministic, "versions": _versions(),
           "created_unix": time.time()}
    if extra:
        doc.update(extra)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=1, default=str))
    return path


def _setup_runtime(args) -> None:
    import torch

    torch.set_num_threads(max(1, args.workers))
    if args.deterministic:
        torch.use_deterministic_algorithms(True)


def load_train_config(path, split: str | None = None, seed: int | None = None):
    """Read a JSON config holding TrainConfig fields (``model`` nested).

    The names ``toy`` and ``full`` select built-in presets.
    """
    from .model import ModelConfig
    from .trainer import TrainConfig

    if path in (None, "toy"):
        cfg = TrainConfig.toy()
    elif path == "full":
        cfg = TrainConfig(model=ModelConfig.full_scale())
    else:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file {p} not found")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{p}:{exc.lineno}: invalid JSON config: {exc.msg}") from exc
        cfg = TrainConfig.from_dict(doc)
    if split is not None:
        cfg = replace(cfg, split=split)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _load(path):
    from .dataset import load_dataset

    return load_dataset(path)


def _with_split(ds, mode, seed):
    from .simkit import make_splits

    if ds.splits is not None and ds.splits.mode == mode:
        return ds
    ds.splits = make_splits([s.truth for s in ds.sessions.values()], mode, seed=seed)
    return ds


def _require_annotations(ds):
    missing = [sid for sid in ds.sessions if sid not in ds.annotations]
    if missing:
        raise DeePointError(f"sessions without annotations (run `deepoint annotate` first): {missing[:3]}")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    from .dataset import write_dataset
    from .simkit import make_benchmark, make_splits

    sessions = make_benchmark(n_rooms=args.rooms, n_actors=args.actors, duration_s=args.duration,
                              n_cameras=args.cameras, seed=args.seed)
    splits = make_splits([s.truth for s in sessions], args.split, seed=args.seed)
    write_dataset(args.out, sessions, None, splits)
    write_manifest(args.out, args, {"sessions": [s.session_id for s in sessions]})
    print(f"wrote {len(sessions)} sessions to {args.out}")
    return 0


def cmd_annotate(args) -> int:
    from .annopipe import AnnotationStats, annotate_session
    from .dataset import write_dataset

    ds = _load(args.data)
    stats = AnnotationStats()
    ann = {sid: annotate_session(s, args.min_confidence, stats) for sid, s in ds.sessions.items()}
    out = args.out or args.data
    write_dataset(out, list(ds.sessions.values()), ann, ds.splits)
    summary = {"annotated_frames": stats.annotated_frames, "excluded_frames": stats.excluded_frames,
               "missing_utterances": stats.missing_utterances,
               "mean_residual_px": float(np.mean(stats.residuals_px)) if stats.residuals_px else None}
    write_manifest(out, args, {"annotation_stats": summary})
    print(json.dumps(summary))
    return 0


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_train_config(args.config, args.split, args.seed)
    ds = _with_split(_load(args.data), cfg.split, args.seed)
    _require_annotations(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = train(ds, ds.splits, cfg, log_path=out / "train_log.jsonl")
    ckpt.save(out / "checkpoint.npz")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    write_manifest(out, args, {"train_config": cfg.to_dict(), "best_epoch": ckpt.epoch, "val_metrics": ckpt.metrics})
    print(f"best epoch {ckpt.epoch}: {ckpt.metrics}")
    return 0


def cmd_evaluate(args) -> int:
    from .evalkit import evaluate_model
    from .trainer import Checkpoint
    from .windows import build_windows

    ckpt = Checkpoint.load(args.checkpoint)
    mode = args.split or (ckpt.train_config.split if ckpt.train_config else "T")
    ds = _with_split(_load(args.data), mode, args.seed)
    _require_annotations(ds)
    w = build_windows(ds, args.subset, ckpt.model_config.tokens_per_window)
    rep = evaluate_model(ckpt.model(), w, threshold=args.threshold, with_map=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=1))
    (out / "metrics.txt").write_text(rep.table() + "\n")
    if rep.error_map is not None:
        _write_jsonl(out / "error_map.jsonl", rep.error_map.records())
    if args.thresholds:
        from .evalkit import frame_prf
        from .trainer import predict_windows

        p, _ = predict_windows(ckpt.model(), w)
        sweep = []
        for t in args.thresholds:
            prf = frame_prf(p, w.pointing, t)
            sweep.append({"threshold": t, "precision": prf.precision, "recall": prf.recall, "f1": prf.f1})
        (out / "threshold_sweep.json").write_text(json.dumps(sweep, indent=1))
    write_manifest(out, args, {"metrics": rep.to_dict()})
    print(rep.table())
    return 0


def cmd_ablate(args) -> int:
    from .evalkit import run_ablation

    cfg = load_train_config(args.config, args.split, args.seed)
    ds = _with_split(_load(args.data), cfg.split, args.seed)
    _require_annotations(ds)
    grid = (args.grid, [int(v) for v in args.values]) if args.values and args.grid == "window" else \
        ((args.grid, args.values) if args.values else args.grid)
    table = run_ablation(grid, cfg, ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table.format() + "\n")
    (out / "ablation.json").write_text(table.to_json())
    write_manifest(out, args, {"train_config": cfg.to_dict()})
    print(table.format())
    return 0 if all(r.metrics is not None for r in table.rows) else 1


def cmd_baseline(args) -> int:
    ds = _load(args.data)
    _require_annotations(ds)
    from .evalkit import baseline_report

    rep = baseline_report(ds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "baselines.json").write_text(json.dumps(rep, indent=1))
    write_manifest(out, args, {"baselines": rep})
    for k, v in rep.items():
        print(f"{k:<12} {v['mean_error_deg']!s:>10} deg over {v['frames']} frames")
    return 0


def mollweide_grid(ds, bin_deg: float):
    """Direction-distribution histogram of annotated world directions."""
    from .evalkit import direction_histogram

    dirs = [f.world_direction for frames in ds.annotations.values() for f in frames if f.has_direction]
    if not dirs:
        raise DeePointError("no annotated directions to plot")
    return direction_histogram(np.asarray(dirs), bin_deg)


def cmd_plot_mollweide(args) -> int:
    ds = _load(args.annotations)
    _require_annotations(ds)
    grid = mollweide_grid(ds, args.bin_deg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "direction_distribution.jsonl", grid.records())
    figure = None
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4))
        c = np.where(grid.count > 0, grid.count, np.nan)
        sc = ax.scatter(grid.x.ravel(), grid.y.ravel(), c=c.ravel(), s=60, marker="s", cmap="viridis")
        t = np.linspace(0, 2 * np.pi, 200)
        ax.plot(2 * np.sqrt(2) * np.cos(t), np.sqrt(2) * np.sin(t), "k-", lw=0.8)
        ax.set_aspect("equal")
        ax.axis("off")
        fig.colorbar(sc, ax=ax, label="frames")
        figure = out / "direction_distribution.png"
        fig.savefig(figure, dpi=120, bbox_inches="tight")
        plt.close(fig)
    except ImportError:
        log.info("matplotlib not installed; wrote gridded data only")
    write_manifest(out, args, {"figure": str(figure) if figure else None})
    print(f"{int(grid.count.sum())} directions binned into {out}")
    return 0


def cmd_selftest(args) -> int:
    """Run the fast oracle and invariant checks."""
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if args.out:
        write_manifest(args.out, args, {"results": [{"name": n, "pass": ok, "detail": d} for n, ok, d in results]})
    return 0 if all(ok for _, ok, _ in results) else 1


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--workers", type=int, default=1, help="worker threads (1 = bit-deterministic)")
    common.add_argument("--deterministic", action="store_true", help="force deterministic kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    data_default = os.environ.get("DEEPOINT_DATA", "data")
    ap = argparse.ArgumentParser(prog="deepoint", description="Synthetic pointing benchmark and DeePoint model.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic sessions")
    p.add_argument("--rooms", type=int, default=2)
    p.add_argument("--actors", type=int, default=8)
    p.add_argument("--duration", type=float, default=120.0, help="seconds per session")
    p.add_argument("--cameras", type=int, default=6)
    p.add_argument("--split", choices=["T", "S", "P"], default="T")
    p.add_argument("--out", default=data_default)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("annotate", parents=[common], help="triangulate hands and label frames")
    p.add_argument("--data", default=data_default)
    p.add_argument("--out", default=None, help="output directory (default: in place)")
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", default=data_default)
    p.add_argument("--config", default="toy", help="JSON config file, or 'toy' / 'full'")
    p.add_argument("--split", choices=["T", "S", "P"], default=None)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--data", default=data_default)
    p.add_argument("--checkpoint", default="runs/train/checkpoint.npz")
    p.add_argument("--split", choices=["T", "S", "P"], default=None)
    p.add_argument("--subset", choices=["train", "val", "test"], default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--thresholds", type=float, nargs="*", default=None, help="extra thresholds to sweep")
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate an ablation grid")
    p.add_argument("--data", default=data_default)
    p.add_argument("--config", default="toy")
    p.add_argument("--split", choices=["T", "S", "P"], default=None)
    p.add_argument("--grid", choices=["window", "appendix", "body_parts", "no_temporal_encoder", "variant"],
                   default="window")
    p.add_argument("--values", nargs="*", default=None)
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", parents=[common], help="elbow/nose-to-hand geometric baselines")
    p.add_argument("--data", default=data_default)
    p.add_argument("--out", default="runs/baseline")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("plot-mollweide", parents=[common], help="direction distribution on a Mollweide grid")
    p.add_argument("--annotations", default=data_default)
    p.add_argument("--bin-deg", type=float, default=15.0)
    p.add_argument("--out", default="runs/plots")
    p.set_defaults(func=cmd_plot_mollweide)

    p = sub.add_parser("selftest", parents=[common], help="run fast oracle and invariant checks")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _setup_runtime(args)
    try:
        return args.func(args)
    except (DeePointError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"deepoint {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
