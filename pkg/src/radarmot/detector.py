"""Moving-object detection: motion classification and density clustering.

A small MLP scores each point's probability of belonging to a mover from its
cost-volume row. Scores above a fixed threshold form the motion mask, and the
masked points are grouped by DBSCAN in a scaled feature space concatenating
position, predicted flow, and a truncated slice of the flow embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .backbone import CostVolume
from .flow import FlowEmbedding, SceneFlow
from .frames import RadarFrame
from .transforms import ValidationError


@dataclass(frozen=True)
class MotionScores:
    scores: np.ndarray  # (N,) in [0, 1]


@dataclass(frozen=True)
class MotionMask:
    mask: np.ndarray  # (N,) of {0, 1}


@dataclass(frozen=True)
class Cluster:
    point_indices: tuple[int, ...]   # sorted frame-local indices
    flow_rows: np.ndarray            # (|cluster|, 3)
    embedding_rows: np.ndarray       # (|cluster|, embed_channels)

    def __len__(self) -> int:
        return len(self.point_indices)


@dataclass(frozen=True)
class DetectConfig:
    zeta_mov: float = 0.5
    dbscan_eps: float = 1.5
    dbscan_min_points: int = 2
    # block weights for (position, flow, embedding); the embedding scale
    # 0.1/sqrt(embed_channels) keeps distances position-dominated
    feature_scales: tuple[float, float, float] = (1.0, 1.0, 0.025)
    embed_channels: int = 16

    def validate(self) -> "DetectConfig":
        if not 0.0 < self.zeta_mov < 1.0:
            raise ValidationError("zeta_mov must lie in (0, 1)")
        if self.dbscan_eps <= 0:
            raise ValidationError("dbscan_eps must be > 0")
        if self.dbscan_min_points < 1:
            raise ValidationError("dbscan_min_points must be >= 1")
        if self.embed_channels < 0:
            raise ValidationError("embed_channels must be >= 0")
        return self


def motion_shapes(in_width: int, hidden: int = 64,
                  prefix: str = "motion_head") -> dict[str, tuple]:
    return {
        f"{prefix}.layer0.w": (in_width, hidden),
        f"{prefix}.layer0.b": (hidden,),
        f"{prefix}.layer1.w": (hidden, 1),
        f"{prefix}.layer1.b": (1,),
    }


def classify_motion(h: CostVolume, store):
    """Per-point moving probability: 2-layer MLP + logistic. Returns cache."""
    x = h.per_point
    if x.shape[0] == 0:
        return MotionScores(np.zeros(0)), None
    z, mlp_cache = nn.mlp_forward(x, store, "motion_head", 2)
    scores = nn.sigmoid(z[:, 0])
    return MotionScores(scores), (mlp_cache, scores)


def classify_motion_backward(d_scores: np.ndarray, cache, grads: dict) -> np.ndarray:
    mlp_cache, scores = cache
    dz = (d_scores * scores * (1.0 - scores))[:, None]
    return nn.mlp_backward(dz, mlp_cache, grads)


def threshold_mask(scores: MotionScores, zeta_mov: float) -> MotionMask:
    # strictly greater: a score exactly at the threshold stays static
    return MotionMask((scores.scores > zeta_mov).astype(int))


def dbscan_labels(features: np.ndarray, eps: float, min_points: int) -> np.ndarray:
    """Plain DBSCAN, deterministic by construction.

    Core points (at least min_points neighbors within eps, self included)
    connected within eps form clusters; border points join their nearest core
    point (ties to the lower core index); the rest label -1. Cluster ids are
    renumbered by ascending smallest member index.
    """
    n = features.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    d2 = ((features[:, None, :] - features[None, :, :]) ** 2).sum(axis=2)
    adj = d2 <= eps * eps
    core = adj.sum(axis=1) >= min_points
    labels = np.full(n, -1, dtype=int)

    next_label = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        stack = [seed]
        labels[seed] = next_label
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] & core):
                if labels[j] == -1:
                    labels[j] = next_label
                    stack.append(j)
        next_label += 1

    core_idx = np.flatnonzero(core)
    for i in np.flatnonzero(~core):
        reachable = core_idx[adj[i, core_idx]]
        if reachable.size:
            best = reachable[np.argmin(d2[i, reachable])]
            labels[i] = labels[best]

    # renumber by first appearance so output ignores traversal order
    remap: dict[int, int] = {}
    out = np.full(n, -1, dtype=int)
    for i in range(n):
        if labels[i] == -1:
            continue
        if labels[i] not in remap:
            remap[labels[i]] = len(remap)
        out[i] = remap[labels[i]]
    return out


def cluster_moving(frame: RadarFrame, mask: MotionMask, flow: SceneFlow,
                   emb: FlowEmbedding, cfg: DetectConfig) -> list[Cluster]:
    """DBSCAN over masked-moving points; noise discarded.

    Clusters come back ordered by their smallest frame-local index.
    """
    n = len(frame)
    if mask.mask.shape[0] != n or flow.vectors.shape[0] != n \
            or emb.per_point.shape[0] != n:
        raise ValidationError("detector input lengths disagree")
    moving = np.flatnonzero(mask.mask == 1)
    if moving.size == 0:
        return []

    s_pos, s_flow, s_emb = cfg.feature_scales
    emb_trunc = emb.per_point[:, :cfg.embed_channels]
    feats = np.hstack([frame.positions[moving] * s_pos,
                       flow.vectors[moving] * s_flow,
                       emb_trunc[moving] * s_emb])
    labels = dbscan_labels(feats, cfg.dbscan_eps, cfg.dbscan_min_points)

    clusters = []
    for c in range(labels.max() + 1 if labels.size else 0):
        members = moving[labels == c]
        clusters.append(Cluster(tuple(int(i) for i in members),
                                flow.vectors[members],
                                emb_trunc[members]))
    clusters.sort(key=lambda cl: cl.point_indices[0])
    return clusters


def clusters_from_indices(groups, flow: SceneFlow, emb: FlowEmbedding,
                          cfg: DetectConfig) -> list[Cluster]:
    """Build clusters from externally supplied index groups (detector=external).

    Groups smaller than dbscan_min_points are dropped to keep the cluster
    invariant intact.
    """
    emb_trunc = emb.per_point[:, :cfg.embed_channels]
    clusters = []
    for group in groups:
        members = np.asarray(sorted(int(i) for i in group), dtype=int)
        if members.size < cfg.dbscan_min_points:
            continue
        clusters.append(Cluster(tuple(int(i) for i in members),
                                flow.vectors[members],
                                emb_trunc[members]))
    clusters.sort(key=lambda cl: cl.point_indices[0])
    return clusters
