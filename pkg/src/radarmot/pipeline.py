"""Sequence-level tracking orchestration.

A Tracker owns all per-sequence state (previous-frame features, GRU hidden
vector, live tracks) and processes frames strictly in order. Besides the
learned path it supports an oracle "cheat" mode (ground-truth mask and flow
injected, no weights needed), externally supplied detections, and two
constant-velocity baseline matchers.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .associator import TrackSet, affinity, aggregate_descriptor, \
    baseline_match, extract_matches, sinkhorn, update_tracks
from .detector import MotionMask, MotionScores, cluster_moving, \
    clusters_from_indices, threshold_mask
from .flow import FlowEmbedding, GruState, SceneFlow
from .frames import RadarFrame
from .model import FrameEncoding, ModelConfig, encode_frame
from .synthetic import SyntheticGroundTruth
from .transforms import ValidationError
from .weights import WeightStore

FLOAT_DECIMALS = 9


@dataclass(frozen=True)
class TrackerConfig:
    model: ModelConfig = ModelConfig()
    matcher: str = "learned"          # learned | greedy | hungarian
    baseline_gate: float = 2.0
    new_track_confidence: float = 0.5
    gru_reset_gap: int = 1            # reset temporal state when gap exceeds this
    cheat_mode: bool = False
    external_detector: bool = False

    def validate(self) -> "TrackerConfig":
        self.model.validate()
        if self.matcher not in ("learned", "greedy", "hungarian"):
            raise ValidationError(f"unknown matcher: {self.matcher}")
        if self.matcher == "learned" and self.cheat_mode:
            raise ValidationError("cheat_mode needs a baseline matcher "
                                  "(it runs without weights)")
        return self


def _round(x) -> float:
    return round(float(x), FLOAT_DECIMALS)


class Tracker:
    """Stateful, single-sequence tracker. Create one per sequence or reset."""

    def __init__(self, cfg: TrackerConfig, store: WeightStore | None = None):
        cfg.validate()
        if store is None and not cfg.cheat_mode:
            raise ValidationError("tracker needs weights unless in cheat mode")
        self.cfg = cfg
        self.store = store
        self.reset()

    def reset(self) -> None:
        self.gru = GruState()
        self.tracks = TrackSet()
        self.prev_enc: FrameEncoding | None = None
        self.prev_index: int | None = None

    def _network_outputs(self, frame: RadarFrame):
        enc = encode_frame(frame, self.prev_enc, self.cfg.model, self.store,
                           self.gru)
        mask = threshold_mask(enc.scores, self.cfg.model.detect.zeta_mov)
        self.prev_enc = enc
        return enc.flow, enc.embedding, enc.scores, mask

    def _cheat_outputs(self, frame: RadarFrame, gt_flow, gt_mask):
        n = len(frame)
        if gt_flow.shape != (n, 3) or gt_mask.shape != (n,):
            raise ValidationError("cheat inputs do not match the frame")
        emb = FlowEmbedding(np.zeros((n, self.cfg.model.detect.embed_channels)))
        scores = MotionScores(gt_mask.astype(float))
        return SceneFlow(np.asarray(gt_flow, dtype=float)), emb, scores, \
            MotionMask(gt_mask.astype(int))

    def step(self, frame: RadarFrame, gt_flow=None, gt_mask=None,
             external_groups=None) -> list[dict]:
        """Process one frame; returns the emitted track records."""
        cfg = self.cfg
        if self.prev_index is not None:
            if frame.frame_index <= self.prev_index:
                raise ValidationError("frames must arrive in increasing order")
            if frame.frame_index - self.prev_index > cfg.gru_reset_gap:
                self.gru.reset()

        if cfg.cheat_mode:
            if gt_flow is None or gt_mask is None:
                raise ValidationError("cheat_mode requires ground-truth inputs")
            flow, emb, scores, mask = self._cheat_outputs(frame, gt_flow, gt_mask)
        else:
            flow, emb, scores, mask = self._network_outputs(frame)

        if cfg.external_detector:
            if external_groups is None:
                raise ValidationError("external detector mode without groups")
            clusters = clusters_from_indices(external_groups, flow, emb,
                                             cfg.model.detect)
        else:
            clusters = cluster_moving(frame, mask, flow, emb, cfg.model.detect)

        descriptors = []
        centroids = np.zeros((len(clusters), 3))
        sensor_centroids = np.zeros((len(clusters), 3))
        for i, cl in enumerate(clusters):
            desc, _ = aggregate_descriptor(cl, frame)
            descriptors.append(desc)
            members = np.asarray(cl.point_indices, dtype=int)
            sensor_centroids[i] = frame.positions[members].mean(axis=0)
            centroids[i] = frame.ego_pose.apply(sensor_centroids[i])

        if cfg.matcher == "learned":
            matches = []
            if clusters and self.tracks.tracks:
                raw, _ = affinity(descriptors,
                                  [t.descriptor for t in self.tracks.tracks],
                                  self.store)
                normalized, _ = sinkhorn(raw, cfg.model.sinkhorn_iterations,
                                         cfg.model.sinkhorn_temperature)
                matches = extract_matches(normalized, cfg.model.match_threshold)
        else:
            matches = baseline_match(self.tracks, centroids, frame.frame_index,
                                     cfg.matcher, cfg.baseline_gate)

        update_tracks(self.tracks, clusters, descriptors, centroids, matches,
                      frame.frame_index, cfg.new_track_confidence)
        self.prev_index = frame.frame_index

        by_cluster = {tuple(c.point_indices): c for c in clusters}
        records = []
        for track in sorted(self.tracks.tracks, key=lambda t: t.id):
            cl = by_cluster[tuple(track.point_indices)]
            members = np.asarray(track.point_indices, dtype=int)
            records.append({
                "frame_index": int(frame.frame_index),
                "track_id": int(track.id),
                "confidence": _round(track.confidence),
                "point_indices": [int(i) for i in track.point_indices],
                "centroid": [_round(v) for v in
                             frame.positions[members].mean(axis=0)],
                "mean_flow": [_round(v) for v in cl.flow_rows.mean(axis=0)],
            })
        return records


def track_sequence(sequence: list[RadarFrame], cfg: TrackerConfig,
                   store: WeightStore | None = None,
                   gt: SyntheticGroundTruth | None = None,
                   external=None):
    """Run a fresh tracker over a sequence.

    Returns (records, timing). `gt` feeds cheat mode; `external` is an
    optional per-frame list of point-index groups. Timing stays out of the
    record stream so artifacts remain byte-stable.
    """
    tracker = Tracker(cfg, store)
    records = []
    per_frame_s = []
    for t, frame in enumerate(sequence):
        kwargs = {}
        if cfg.cheat_mode:
            if gt is None:
                raise ValidationError("cheat_mode requires ground truth")
            kwargs["gt_flow"] = gt.flows[t]
            kwargs["gt_mask"] = gt.masks[t]
        if cfg.external_detector:
            kwargs["external_groups"] = external[t] if external else []
        start = time.perf_counter()
        records.extend(tracker.step(frame, **kwargs))
        per_frame_s.append(time.perf_counter() - start)
    timing = {"frames": len(sequence),
              "total_s": float(sum(per_frame_s)),
              "max_frame_s": float(max(per_frame_s, default=0.0))}
    return records, timing


def write_track_file(path, records: list[dict]) -> None:
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
