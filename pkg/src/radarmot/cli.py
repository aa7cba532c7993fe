"""Command line entry points: track, train, eval, synth, grad-check, sweep.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 training
divergence. Set RADARMOT_VERBOSE=1 (info) or 2 (debug) for stderr logging.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .frames import load_sequence, save_sequence
from .gradcheck import check_losses
from .metrics import EvalSequence, evaluate, load_object_frames, sweep
from .model import init_model, load_model
from .pipeline import Tracker, track_sequence, write_track_file
from .synthetic import SyntheticSceneConfig, generate_synthetic_sequence, \
    load_ground_truth, save_ground_truth
from .training import TrainItem, TrainingDivergence, train
from .transforms import ValidationError

log = logging.getLogger("radarmot")


def _setup_logging() -> None:
    level = {"": logging.WARNING, "0": logging.WARNING,
             "1": logging.INFO, "2": logging.DEBUG}
    verbose = os.environ.get("RADARMOT_VERBOSE", "").strip().lower()
    logging.basicConfig(
        stream=sys.stderr,
        level=level.get(verbose, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s")


def _pipeline_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    return load_config(path)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.9g" % v
    return str(v)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _save_plot(path, xs, curves: dict, xlabel: str, ylabel: str) -> None:
    """Deterministic SVG line plot (fixed hash salt, no embedded date)."""
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "radarmot"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        for label, ys in curves.items():
            pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
            if not pts:
                continue
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    marker="o", markersize=3, linewidth=1.2, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# track

def _load_detections(path, n_frames: int) -> list[list[tuple]]:
    """JSONL records {frame_index, point_indices} -> per-frame group lists."""
    groups: list[list[tuple]] = [[] for _ in range(n_frames)]
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            f = int(rec["frame_index"])
            pts = tuple(sorted(int(i) for i in rec["point_indices"]))
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise OSError(f"{path}:{line_no}: bad detection record: {e}") from e
        if not 0 <= f < n_frames:
            raise ValidationError(
                f"{path}:{line_no}: frame_index {f} out of range")
        groups[f].append(pts)
    return groups


def _cmd_track(args) -> int:
    cfg = _pipeline_config(args.config)
    matcher = args.matcher
    if matcher is None and args.cheat and cfg.tracker.matcher == "learned":
        matcher = "hungarian"
        log.info("cheat mode runs without weights; matcher set to hungarian")
    if matcher:
        cfg = replace(cfg, tracker=replace(cfg.tracker, matcher=matcher))
    tcfg = cfg.tracker_config(cheat_mode=args.cheat)
    if args.detections:
        tcfg = replace(tcfg, external_detector=True).validate()

    pairs = load_sequence(args.sequence)
    frames = [f for f, _ in pairs]
    gt = load_ground_truth(args.sequence) if args.cheat else None
    external = None
    if tcfg.external_detector:
        if not args.detections:
            raise ValidationError("external detector needs --detections")
        external = _load_detections(args.detections, len(frames))

    store = None
    if not args.cheat:
        mcfg = tcfg.model
        if args.weights:
            store = load_model(args.weights, mcfg)
        else:
            store = init_model(mcfg, cfg.seed)
            log.warning("no --weights given; tracking with seeded random "
                        "initialization (seed %d)", cfg.seed)

    if args.flow_dump:
        tracker = Tracker(tcfg, store)
        records, per_frame, dumps = [], [], {}
        for t, frame in enumerate(frames):
            kwargs = {}
            if tcfg.cheat_mode:
                kwargs["gt_flow"] = gt.flows[t]
                kwargs["gt_mask"] = gt.masks[t]
            if tcfg.external_detector:
                kwargs["external_groups"] = external[t]
            start = time.perf_counter()
            records.extend(tracker.step(frame, **kwargs))
            per_frame.append(time.perf_counter() - start)
            vectors = gt.flows[t] if tcfg.cheat_mode \
                else tracker.prev_enc.flow.vectors
            dumps[f"flow_{frame.frame_index:06d}"] = \
                np.asarray(vectors, dtype=np.float32)
        timing = {"frames": len(frames), "total_s": float(sum(per_frame)),
                  "max_frame_s": float(max(per_frame, default=0.0))}
        np.savez(args.flow_dump, **dumps)
    else:
        records, timing = track_sequence(frames, tcfg, store=store, gt=gt,
                                         external=external)

    write_track_file(args.output, records)
    log.info("tracked %d frames -> %d records in %.3fs (max frame %.4fs)",
             timing["frames"], len(records), timing["total_s"],
             timing["max_frame_s"])
    return 0


# ---------------------------------------------------------------------------
# train

def _cmd_train(args) -> int:
    cfg = _pipeline_config(args.config)
    data = Path(args.data)
    if not data.is_dir():
        raise ValidationError(f"data directory not found: {data}")
    items = []
    for seq_dir in sorted(p for p in data.iterdir() if p.is_dir()):
        pairs = load_sequence(seq_dir)
        if not pairs:
            continue
        frames = [f for f, _ in pairs]
        boxes = [b for _, bs in pairs for b in bs]
        items.append(TrainItem.from_annotations(frames, boxes, seq_dir.name))
    if not items:
        raise ValidationError(f"no sequences under {data}")

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _, _, summaries = train(
        items, cfg.model_config(), cfg.loss, cfg.train, seed=cfg.seed,
        log_path=out / "training_log.csv", checkpoint_dir=out,
        resume=args.resume)
    for row in summaries:
        log.info("stage %d epoch %d: total %.6f seg %.6f flow %.6f aff %.6f",
                 row["stage"], row["epoch"], row["loss_total"],
                 row["loss_seg"], row["loss_flow"], row["loss_aff"])
    log.info("trained on %d sequences; artifacts in %s", len(items), out)
    return 0


# ---------------------------------------------------------------------------
# eval / sweep

def _infer_n_frames(paths) -> int:
    top = -1
    for path in paths:
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            try:
                top = max(top, int(json.loads(line)["frame_index"]))
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise OSError(f"{path}: bad object record: {e}") from e
    return top + 1


def _load_eval_pair(pair) -> EvalSequence:
    gt_path, pred_path = pair
    n = _infer_n_frames([gt_path, pred_path])
    gt_objs, _ = load_object_frames(gt_path, n)
    pred_objs, conf = load_object_frames(pred_path, n)
    return EvalSequence(gt_objs, pred_objs, conf)


def _load_eval_pairs(gt_paths, pred_paths, jobs: int) -> list[EvalSequence]:
    if len(gt_paths) != len(pred_paths):
        raise ValidationError("--gt and --pred counts differ")
    pairs = list(zip(gt_paths, pred_paths))
    if jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_load_eval_pair, pairs))
    return [_load_eval_pair(p) for p in pairs]


RECALL_COLUMNS = ["target_recall", "threshold", "achieved_recall", "mota",
                  "smota", "motp", "tp", "fp", "fn", "id_switches"]


def _cmd_eval(args) -> int:
    cfg = _pipeline_config(args.config)
    seqs = _load_eval_pairs(args.gt, args.pred, args.jobs)
    report = evaluate(seqs, cfg.eval)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    (out / "metrics.json").write_text(payload + "\n")
    table = report.recall_table
    _write_csv(out / "sweep.csv", RECALL_COLUMNS,
               [[p.to_dict()[c] for c in RECALL_COLUMNS] for p in table])
    if args.plot and table:
        xs = [p.target_recall for p in table]
        _save_plot(out / "recall_curves.svg", xs,
                   {"sMOTA": [p.smota for p in table],
                    "MOTA": [p.mota for p in table],
                    "MOTP": [p.motp for p in table]},
                   "target recall", "score")
    log.info("metrics written to %s", out)
    print(payload)
    return 0


SWEEP_COLUMNS = ["value", "mota", "moda", "mt", "ml", "samota", "amota",
                 "amotp"]


def _cmd_sweep(args) -> int:
    cfg = _pipeline_config(args.config)
    seqs = _load_eval_pairs(args.gt, args.pred, args.jobs)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("--values is empty")
    rows = sweep(seqs, args.axis, values, cfg.eval)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
               [[v, r.mota, r.moda, r.mt, r.ml, r.samota, r.amota, r.amotp]
                for v, r in rows])
    if args.plot:
        xs = [v for v, _ in rows]
        _save_plot(out / "sweep.svg", xs,
                   {"MOTA": [r.mota for _, r in rows],
                    "MODA": [r.moda for _, r in rows]},
                   args.axis, "score")
    log.info("sweep over %s written to %s", args.axis, out)
    return 0


# ---------------------------------------------------------------------------
# synth

def _synth_worker(task) -> str:
    out_dir, overrides = task
    cfg = SyntheticSceneConfig(**overrides)
    sequence, gt = generate_synthetic_sequence(cfg)
    save_sequence(out_dir, sequence, fps=cfg.fps)
    save_ground_truth(out_dir, gt)
    return str(out_dir)


def _cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for i in range(args.count):
        overrides = dict(
            n_objects=args.objects, points_per_object=args.points_per_object,
            n_static=args.static, n_frames=args.frames,
            rng_seed=args.seed + i, radial_objects=args.radial,
            ego_velocity=(args.ego_speed, 0.0, 0.0))
        tasks.append((out / f"seq_{i:03d}", overrides))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_synth_worker, tasks))
    else:
        done = [_synth_worker(t) for t in tasks]
    for path in done:
        log.info("wrote %s", path)
    print(f"generated {len(done)} sequences under {out}")
    return 0


# ---------------------------------------------------------------------------
# grad-check

def _cmd_grad_check(args) -> int:
    cfg = _pipeline_config(args.config)
    reports = check_losses(cfg.model_config(), cfg.loss,
                           step=args.step, seed=args.seed)
    failed = False
    for part, report in reports.items():
        bad = report.failing(args.tolerance)
        status = "ok" if not bad else f"FAIL ({len(bad)} tensors)"
        print(f"{part:6s} max rel err {report.max_rel_error:.3e} "
              f"worst {report.worst_tensor or '-'}: {status}")
        failed = failed or bool(bad)
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarmot",
        description="Moving-object tracking on 4D radar point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run the tracker over one sequence")
    p.add_argument("--sequence", required=True, help="sequence directory")
    p.add_argument("--output", required=True, help="track JSONL path")
    p.add_argument("--config", help="pipeline config YAML")
    p.add_argument("--weights", help="weight archive (.npz)")
    p.add_argument("--matcher", choices=("learned", "greedy", "hungarian"))
    p.add_argument("--cheat", action="store_true",
                   help="inject ground-truth flow and motion mask")
    p.add_argument("--detections",
                   help="JSONL point-index groups from an external detector")
    p.add_argument("--flow-dump", help="write per-frame flow arrays (.npz)")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("train", help="two-stage training on a data directory")
    p.add_argument("--data", required=True,
                   help="directory of sequence subdirectories")
    p.add_argument("--output", required=True, help="artifact directory")
    p.add_argument("--config")
    p.add_argument("--resume", action="store_true",
                   help="reuse the stage-1 checkpoint if present")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score track files against ground truth")
    p.add_argument("--gt", action="append", required=True,
                   help="ground-truth object JSONL (repeatable)")
    p.add_argument("--pred", action="append", required=True,
                   help="predicted track JSONL (repeatable, pairs with --gt)")
    p.add_argument("--output", required=True, help="report directory")
    p.add_argument("--config")
    p.add_argument("--plot", action="store_true", help="write SVG curves")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate labeled synthetic sequences")
    p.add_argument("--output", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--points-per-object", type=int, default=10)
    p.add_argument("--static", type=int, default=60)
    p.add_argument("--ego-speed", type=float, default=0.0,
                   help="ego velocity along +x (m/s)")
    p.add_argument("--radial", action="store_true",
                   help="aim object velocities along the sensor ray")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("grad-check",
                       help="finite-difference audit of the loss gradients")
    p.add_argument("--config")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("sweep", help="re-evaluate across threshold values")
    p.add_argument("--gt", action="append", required=True)
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--axis", required=True,
                   choices=("min_points_valid", "iou_threshold"))
    p.add_argument("--values", required=True,
                   help="comma-separated threshold values")
    p.add_argument("--config")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return int(args.func(args) or 0)
    except TrainingDivergence as e:
        log.error("training diverged: %s", e)
        return 3
    except (ValidationError, ValueError) as e:
        log.error("validation error: %s", e)
        return 1
    except Exception as e:
        log.exception("runtime error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
