"""Two-stage training over annotated sequences.

Stage 1 fits the backbone, cost volume, and motion classifier with the
segmentation loss only; everything else stays frozen. Stage 2 unfreezes the
whole network and optimizes the weighted multi-task total. One optimizer
step per frame pair, sequences processed in order, learning rate decayed
once per epoch. Temporal credit is truncated at frame boundaries: the
previous frame's features, descriptors, and the incoming GRU state are
constants for each step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .associator import affinity, affinity_backward, aggregate_descriptor, \
    aggregate_descriptor_backward, sinkhorn, sinkhorn_backward
from .detector import cluster_moving, threshold_mask
from .flow import GruState
from .frames import BoxAnnotation, RadarFrame
from .labels import generate_labels
from .losses import LossConfig, loss_aff, loss_flow, loss_seg, loss_total
from .model import ModelConfig, encode_frame, frame_backward, init_model
from .nn import Adam
from .transforms import ValidationError
from .weights import WeightStore

STAGE1_PREFIXES = ("pfe.", "cost.", "motion_head.")
LOG_COLUMNS = ("stage", "epoch", "step", "loss_flow", "loss_seg", "loss_aff",
               "loss_total", "lr")


@dataclass(frozen=True)
class TrainSchedule:
    stage1_epochs: int = 16
    stage1_lr: float = 0.001
    stage2_epochs: int = 8
    stage2_lr: float = 0.0008
    lr_decay_per_epoch: float = 0.97

    def validate(self) -> "TrainSchedule":
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValidationError("epoch counts must be >= 0")
        if min(self.stage1_lr, self.stage2_lr, self.lr_decay_per_epoch) <= 0:
            raise ValidationError("rates must be > 0")
        return self


class TrainingDivergence(RuntimeError):
    def __init__(self, stage: int, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at stage {stage} "
                         f"epoch {epoch} step {step}")
        self.stage, self.epoch, self.step = stage, epoch, step


@dataclass
class TrainItem:
    """One training sequence with its box annotations grouped by frame."""

    frames: list[RadarFrame]
    boxes: dict[int, list[BoxAnnotation]]
    name: str = "seq"

    @classmethod
    def from_annotations(cls, frames, annotations, name="seq"):
        boxes: dict[int, list[BoxAnnotation]] = {}
        for box in annotations:
            boxes.setdefault(box.frame_index, []).append(box)
        return cls(frames=list(frames), boxes=boxes, name=name)


def stage_trainable(store: WeightStore, stage: int) -> list[str]:
    names = sorted(store.names())
    if stage == 1:
        return [n for n in names if n.startswith(STAGE1_PREFIXES)]
    return names


def _pair_step(item: TrainItem, t: int, enc, prev_enc, prev_groups,
               prev_descriptors, cfg: ModelConfig, loss_cfg: LossConfig,
               store, stage: int):
    """Losses + gradients for the frame pair (t-1, t).

    Returns (values dict, grads dict, detection groups, descriptors).
    """
    frame = item.frames[t]
    prev_frame = item.frames[t - 1]
    n = len(frame)

    mask = threshold_mask(enc.scores, cfg.detect.zeta_mov)
    clusters = cluster_moving(frame, mask, enc.flow, enc.embedding, cfg.detect)
    det_groups = [c.point_indices for c in clusters]
    descriptors = []
    desc_caches = []
    for cl in clusters:
        desc, cache = aggregate_descriptor(cl, frame)
        descriptors.append(desc)
        desc_caches.append(cache)

    labels = generate_labels(frame, prev_frame,
                             item.boxes.get(frame.frame_index, []),
                             item.boxes.get(prev_frame.frame_index, []),
                             det_groups, prev_groups,
                             loss_cfg.motion_label_threshold)

    seg_value, d_scores = loss_seg(enc.scores.scores, labels.motion_mask,
                                   loss_cfg.beta, loss_cfg.log_epsilon)
    grads: dict = {}
    values = {"loss_seg": seg_value, "loss_flow": 0.0, "loss_aff": 0.0}

    if stage == 1:
        values["loss_total"] = seg_value
        frame_backward(enc, cfg, store, grads, d_scores=d_scores)
        return values, grads, det_groups, descriptors

    flow_value, d_flow = loss_flow(enc.flow.vectors, labels.flow)
    values["loss_flow"] = flow_value

    d_embedding = np.zeros((n, cfg.embedding_width))
    aff_value = 0.0
    if descriptors and prev_descriptors:
        raw, aff_cache = affinity(descriptors, prev_descriptors, store)
        normalized, sink_cache = sinkhorn(raw, cfg.sinkhorn_iterations,
                                          cfg.sinkhorn_temperature)
        aff_value, d_norm = loss_aff(normalized, labels.affinity,
                                     loss_cfg.log_epsilon)
        d_raw = sinkhorn_backward(d_norm, sink_cache)
        d_desc_new, _ = affinity_backward(d_raw, aff_cache, grads)
        for k, cl in enumerate(clusters):
            d_fr, d_er = aggregate_descriptor_backward(d_desc_new[k],
                                                       desc_caches[k])
            members = np.asarray(cl.point_indices, dtype=int)
            d_flow[members] += d_fr
            d_embedding[members, :cfg.detect.embed_channels] += d_er
    values["loss_aff"] = aff_value
    parts = (flow_value, seg_value, aff_value)
    if not all(np.isfinite(p) for p in parts):
        # divergence: let the caller abort with epoch/step context
        values["loss_total"] = float(np.sum(parts))
        return values, grads, det_groups, descriptors
    values["loss_total"] = loss_total(flow_value, seg_value, aff_value,
                                      loss_cfg)

    if not cfg.use_motion_module:
        d_flow = None  # flow is identically zero in this ablation
    frame_backward(enc, cfg, store, grads, d_flow=d_flow, d_scores=d_scores,
                   d_embedding=d_embedding if np.any(d_embedding) else None)
    return values, grads, det_groups, descriptors


def train(items: list[TrainItem], cfg: ModelConfig, loss_cfg: LossConfig,
          schedule: TrainSchedule, seed: int = 0,
          store: WeightStore | None = None, log_path=None,
          checkpoint_dir=None, resume: bool = False):
    """Returns (weights, log rows, epoch summaries).

    Log rows follow LOG_COLUMNS. Epoch summaries hold per-epoch loss means
    keyed by (stage, epoch). With `resume`, a stage-1 checkpoint in
    `checkpoint_dir` is loaded and stage 1 skipped.
    """
    cfg.validate()
    loss_cfg.validate()
    schedule.validate()
    if store is None:
        store = init_model(cfg, seed)

    stage1_done = False
    if resume and checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir) / "stage1.npz"
        if ckpt.exists():
            store = WeightStore.load(ckpt)
            stage1_done = True

    log_rows: list[dict] = []
    summaries: list[dict] = []
    stages = [(1, schedule.stage1_epochs, schedule.stage1_lr),
              (2, schedule.stage2_epochs, schedule.stage2_lr)]
    for stage, epochs, lr0 in stages:
        if stage == 1 and stage1_done:
            continue
        optimizer = Adam(stage_trainable(store, stage), lr=lr0)
        for epoch in range(epochs):
            optimizer.lr = lr0 * schedule.lr_decay_per_epoch ** epoch
            epoch_values: list[dict] = []
            step = 0
            for item in items:
                gru = GruState()
                prev_enc = None
                prev_groups: list = []
                prev_descriptors: list = []
                for t, frame in enumerate(item.frames):
                    enc = encode_frame(frame, prev_enc, cfg, store, gru)
                    if t > 0 and len(frame) and len(item.frames[t - 1]):
                        values, grads, det_groups, descriptors = _pair_step(
                            item, t, enc, prev_enc, prev_groups,
                            prev_descriptors, cfg, loss_cfg, store, stage)
                        if not np.isfinite(values["loss_total"]):
                            raise TrainingDivergence(stage, epoch, step,
                                                     values["loss_total"])
                        optimizer.step(store, grads)
                        row = {"stage": stage, "epoch": epoch, "step": step,
                               "lr": optimizer.lr, **values}
                        log_rows.append(row)
                        epoch_values.append(values)
                        step += 1
                    else:
                        mask = threshold_mask(enc.scores, cfg.detect.zeta_mov)
                        clusters = cluster_moving(frame, mask, enc.flow,
                                                  enc.embedding, cfg.detect)
                        det_groups = [c.point_indices for c in clusters]
                        descriptors = [aggregate_descriptor(c, frame)[0]
                                       for c in clusters]
                    prev_enc = enc
                    prev_groups = det_groups
                    prev_descriptors = descriptors
            if epoch_values:
                summaries.append({
                    "stage": stage, "epoch": epoch,
                    **{key: float(np.mean([v[key] for v in epoch_values]))
                       for key in ("loss_flow", "loss_seg", "loss_aff",
                                   "loss_total")}})
        if stage == 1 and checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            store.save(Path(checkpoint_dir) / "stage1.npz")

    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        store.save(Path(checkpoint_dir) / "final.npz")
    if log_path is not None:
        write_log(log_path, log_rows)
    return store, log_rows, summaries


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("loss_flow", "loss_seg", "loss_aff", "loss_total", "lr"):
                out[key] = "%.9g" % out[key]
            writer.writerow(out)
