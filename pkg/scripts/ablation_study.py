"""Directional ablation study: full model vs two reduced variants.

Trains three models with identical data, seeds, and schedule, differing only
in the ablation switches, then evaluates all of them on a shared synthetic
set that stresses what each removed part provides:

- crossing scenes, where two objects pass within a fraction of the cluster
  radius, punish association without motion features (identity swaps);
- slow radial scenes, where displacement barely exceeds the position noise,
  punish the motion mask without per-point radial velocity input.

The expected outcome is full > disable_motion_module and
full > disable_velocity_features on aggregate MOTA.
"""

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

from radarmot.config import AblationConfig, PipelineConfig
from radarmot.metrics import EvalConfig, accumulate_all, clear_metrics, \
    eval_sequence_from_records
from radarmot.pipeline import track_sequence
from radarmot.synthetic import CrossingSceneConfig, SyntheticSceneConfig, \
    generate_crossing_sequence, generate_synthetic_sequence
from radarmot.training import TrainItem, TrainSchedule, train

VARIANTS = [
    ("full", AblationConfig()),
    ("no_motion", AblationConfig(disable_motion_module=True)),
    ("no_velocity", AblationConfig(disable_velocity_features=True)),
]


def train_items(seeds, n_frames):
    items = []
    for s in seeds:
        seq, _ = generate_synthetic_sequence(
            SyntheticSceneConfig(rng_seed=s, n_frames=n_frames))
        frames = [f for f, _ in seq]
        boxes = [b for _, bs in seq for b in bs]
        items.append(TrainItem.from_annotations(frames, boxes, f"seq_{s:03d}"))
    return items


def eval_scenes():
    """Crossing passes plus slow radial movers; returns (name, frames, gt)."""
    out = []
    for s in (1, 2, 3):
        seq, gt = generate_crossing_sequence(CrossingSceneConfig(rng_seed=s))
        out.append((f"crossing_{s}", [f for f, _ in seq], gt))
    for s in (12, 13):
        seq, gt = generate_synthetic_sequence(SyntheticSceneConfig(
            rng_seed=s, radial_objects=True, object_speed_range=(0.8, 1.2),
            noise_sigma=0.05, n_frames=10))
        out.append((f"radial_{s}", [f for f, _ in seq], gt))
    return out


def run_variant(ablations, items, scenes, sched, seed):
    cfg = replace(PipelineConfig(), ablations=ablations).validate()
    store, _, _ = train(items, cfg.model_config(), cfg.loss, sched, seed=seed)
    tcfg = cfg.tracker_config()
    seqs = []
    for _, frames, gt in scenes:
        records, _ = track_sequence(frames, tcfg, store=store)
        gt_frames = [gt.gt_objects(t) for t in range(len(frames))]
        seqs.append(eval_sequence_from_records(gt_frames, records))
    ecfg = EvalConfig(confidence_sweep=False)
    acc = accumulate_all(seqs, ecfg)
    mota, moda, _, _ = clear_metrics(acc)
    return (mota, moda), acc


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None, help="directory for ablations.csv")
    ap.add_argument("--stage1-epochs", type=int, default=4)
    ap.add_argument("--stage2-epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    base = PipelineConfig().validate()
    sched = TrainSchedule(
        stage1_epochs=args.stage1_epochs, stage1_lr=base.train.stage1_lr,
        stage2_epochs=args.stage2_epochs, stage2_lr=base.train.stage2_lr,
        lr_decay_per_epoch=base.train.lr_decay_per_epoch)
    items = train_items((0, 1, 2, 3), 8)
    scenes = eval_scenes()

    rows = []
    t0 = time.time()
    for name, abls in VARIANTS:
        (mota, moda), acc = run_variant(abls, items, scenes, sched, args.seed)
        rows.append({"variant": name, "mota": mota, "moda": moda,
                     "tp": acc.tp, "fp": acc.fp, "fn": acc.fn,
                     "id_switches": acc.id_switches})
        print("%-12s mota %.4f  moda %.4f  tp %d fp %d fn %d idsw %d"
              % (name, mota, moda, acc.tp, acc.fp, acc.fn, acc.id_switches))
    print("wall %.1fs" % (time.time() - t0))

    full = rows[0]["mota"]
    for row in rows[1:]:
        verdict = "worse" if row["mota"] < full else "NOT worse"
        print("full vs %-12s %+.4f (%s)" % (row["variant"],
                                            row["mota"] - full, verdict))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablations.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        print("wrote", out / "ablations.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
