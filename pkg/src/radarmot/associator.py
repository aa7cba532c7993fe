"""Cluster descriptors, learned affinity, Sinkhorn matching, track lifecycle.

Each detected cluster is summarized by a fixed-width descriptor (position
mean and population variance plus a max-pooled flow/embedding block). A small
MLP scores descriptor differences between new clusters and live tracks; the
score matrix is normalized by alternating row/column Sinkhorn iterations and
matches are read out greedily, one-to-one. Track ids follow an immediate-
removal lifecycle: matched detections inherit the id and the match score as
confidence, unmatched detections open fresh tracks, unmatched tracks die.

A constant-velocity centroid matcher (greedy or hungarian) provides a
weights-free baseline used for ablations and oracle runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import nn
from .detector import Cluster
from .frames import RadarFrame
from .transforms import ValidationError

SINKHORN_ITERATIONS = 30
SINKHORN_TEMPERATURE = 1.0
MATCH_THRESHOLD = 0.5
NEW_TRACK_CONFIDENCE = 0.5


@dataclass(frozen=True)
class ClusterDescriptor:
    vector: np.ndarray  # (6 + 3 + embed_channels,)


@dataclass
class Track:
    id: int
    descriptor: ClusterDescriptor
    point_indices: tuple[int, ...]
    confidence: float
    age: int
    last_seen: int
    centroid: np.ndarray               # world coordinates, for the baseline
    velocity: np.ndarray               # world displacement per frame interval


@dataclass
class TrackSet:
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 0

    def __len__(self) -> int:
        return len(self.tracks)


def descriptor_width(embed_channels: int) -> int:
    return 6 + 3 + embed_channels


def affinity_shapes(desc_width: int, hidden: tuple[int, int] = (64, 64),
                    prefix: str = "affinity") -> dict[str, tuple]:
    return {
        f"{prefix}.layer0.w": (desc_width, hidden[0]),
        f"{prefix}.layer0.b": (hidden[0],),
        f"{prefix}.layer1.w": (hidden[0], hidden[1]),
        f"{prefix}.layer1.b": (hidden[1],),
        f"{prefix}.layer2.w": (hidden[1], 1),
        f"{prefix}.layer2.b": (1,),
    }


def aggregate_descriptor(cluster: Cluster, frame: RadarFrame):
    """concat(mean position, population variance, max over [flow, emb] rows)."""
    members = np.asarray(cluster.point_indices, dtype=int)
    pos = frame.positions[members]
    block = np.hstack([cluster.flow_rows, cluster.embedding_rows])
    pooled, pool_cache = nn.max_pool_forward(block, axis=0)
    vec = np.concatenate([pos.mean(axis=0), pos.var(axis=0), pooled])
    if not np.all(np.isfinite(vec)):
        raise ValidationError("non-finite cluster descriptor")
    return ClusterDescriptor(vec), pool_cache


def aggregate_descriptor_backward(d_vec: np.ndarray, pool_cache):
    """Returns (d_flow_rows, d_embedding_rows); position stats carry no grads."""
    d_block = nn.max_pool_backward(d_vec[6:], pool_cache)
    return d_block[:, :3], d_block[:, 3:]


def affinity(desc_new: list[ClusterDescriptor],
             desc_tracks: list[ClusterDescriptor], store):
    """Raw logit matrix (K, M): MLP on pairwise descriptor differences."""
    k, m = len(desc_new), len(desc_tracks)
    if k == 0 or m == 0:
        return np.zeros((k, m)), None
    new_mat = np.stack([d.vector for d in desc_new])
    trk_mat = np.stack([d.vector for d in desc_tracks])
    if new_mat.shape[1] != trk_mat.shape[1]:
        raise ValidationError("descriptor widths disagree")
    diff = new_mat[:, None, :] - trk_mat[None, :, :]
    flat = diff.reshape(k * m, -1)
    logits, mlp_cache = nn.mlp_forward(flat, store, "affinity", 3)
    return logits.reshape(k, m), (mlp_cache, k, m)


def affinity_backward(d_raw: np.ndarray, cache, grads: dict):
    """Returns (d_desc_new (K,D), d_desc_tracks (M,D))."""
    mlp_cache, k, m = cache
    d_flat = nn.mlp_backward(d_raw.reshape(k * m, 1), mlp_cache, grads)
    d_diff = d_flat.reshape(k, m, -1)
    return d_diff.sum(axis=1), -d_diff.sum(axis=0)


def sinkhorn(raw: np.ndarray, iterations: int = SINKHORN_ITERATIONS,
             temperature: float = SINKHORN_TEMPERATURE):
    """Alternating row/column normalization of exp(raw / temperature).

    Rectangular problems normalize rows to min(1, M/K) and columns to
    min(1, K/M): the long side shares unit mass, so every row and column sum
    stays <= 1, and the square case reduces to plain doubly-stochastic
    balancing. Returns (normalized, cache) for backprop.
    """
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ValidationError("sinkhorn needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("non-finite affinity logits")
    k, m = raw.shape
    row_target = min(1.0, m / k)
    col_target = min(1.0, k / m)
    # subtracting the row max only rescales rows, which the first row
    # normalization cancels, so it is gradient-exact to treat as constant
    p0 = np.exp((raw - raw.max(axis=1, keepdims=True)) / temperature)
    p = p0
    steps = []
    for _ in range(iterations):
        rs = p.sum(axis=1, keepdims=True)
        p_row = p * (row_target / rs)
        cs = p_row.sum(axis=0, keepdims=True)
        p_col = p_row * (col_target / cs)
        steps.append((rs, p_row, cs, p_col))
        p = p_col
    return p, (p0, temperature, row_target, col_target, steps)


def sinkhorn_backward(d_out: np.ndarray, cache) -> np.ndarray:
    """Gradient w.r.t. the raw logits through all iterations."""
    p0, temperature, row_target, col_target, steps = cache
    d = d_out
    for rs, p_row, cs, p_col in reversed(steps):
        # column step: y = x * (t / cs), cs = sum_k x
        d = (col_target / cs) * d - (d * p_col).sum(axis=0, keepdims=True) / cs
        # row step: y = x * (t / rs)
        d = (row_target / rs) * d - (d * p_row).sum(axis=1, keepdims=True) / rs
    return d * p0 / temperature


def extract_matches(normalized: np.ndarray,
                    threshold: float = MATCH_THRESHOLD) -> list[tuple[int, int, float]]:
    """Greedy one-to-one readout in descending score order.

    Ties break toward the lower (detection, track) index pair.
    """
    k, m = normalized.shape
    order = sorted(((float(normalized[i, j]), i, j)
                    for i in range(k) for j in range(m)),
                   key=lambda t: (-t[0], t[1], t[2]))
    used_rows: set[int] = set()
    used_cols: set[int] = set()
    matches = []
    for score, i, j in order:
        if score < threshold or i in used_rows or j in used_cols:
            continue
        used_rows.add(i)
        used_cols.add(j)
        matches.append((i, j, score))
    return matches


def update_tracks(track_set: TrackSet, clusters: list[Cluster],
                  descriptors: list[ClusterDescriptor],
                  centroids: np.ndarray, matches: list[tuple[int, int, float]],
                  frame_index: int,
                  new_confidence: float = NEW_TRACK_CONFIDENCE) -> TrackSet:
    """Apply one frame of lifecycle: inherit / create / remove immediately.

    `centroids` holds one world-frame centroid per cluster (baseline motion
    state). Mutates and returns `track_set`.
    """
    ids = [t.id for t in track_set.tracks]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate track ids")

    matched_dets = {k for k, _, _ in matches}
    matched_tracks = {}
    for k, m, score in matches:
        matched_tracks[m] = (k, score)

    survivors: list[Track] = []
    for m, track in enumerate(track_set.tracks):
        if m not in matched_tracks:
            continue  # absent this frame: removed immediately
        k, score = matched_tracks[m]
        gap = max(frame_index - track.last_seen, 1)
        new_centroid = centroids[k]
        track.velocity = (new_centroid - track.centroid) / gap
        track.centroid = new_centroid
        track.descriptor = descriptors[k]
        track.point_indices = clusters[k].point_indices
        track.confidence = float(score)
        track.age += gap
        track.last_seen = frame_index
        survivors.append(track)

    for k, cluster in enumerate(clusters):
        if k in matched_dets:
            continue
        survivors.append(Track(id=track_set.next_id,
                               descriptor=descriptors[k],
                               point_indices=cluster.point_indices,
                               confidence=new_confidence,
                               age=0,
                               last_seen=frame_index,
                               centroid=np.array(centroids[k], dtype=float),
                               velocity=np.zeros(3)))
        track_set.next_id += 1

    track_set.tracks = survivors
    return track_set


def match_by_cost(cost: np.ndarray, method: str,
                  gate: float | None) -> list[tuple[int, int]]:
    """One-to-one pairs (row, col) minimizing distance cost.

    greedy: ascending cost, ties to the lower (row, col) pair.
    hungarian: provably minimal total cost (then gated).
    """
    k, m = cost.shape
    if k == 0 or m == 0:
        return []
    if method == "greedy":
        order = sorted(((float(cost[i, j]), i, j)
                        for i in range(k) for j in range(m)))
        used_r: set[int] = set()
        used_c: set[int] = set()
        pairs = []
        for c, i, j in order:
            if i in used_r or j in used_c:
                continue
            if gate is not None and c > gate:
                break
            used_r.add(i)
            used_c.add(j)
            pairs.append((i, j))
        return pairs
    if method == "hungarian":
        rows, cols = linear_sum_assignment(cost)
        return [(int(i), int(j)) for i, j in zip(rows, cols)
                if gate is None or cost[i, j] <= gate]
    raise ValidationError(f"unknown match method: {method}")


def baseline_match(track_set: TrackSet, det_centroids: np.ndarray,
                   frame_index: int, method: str = "hungarian",
                   gate: float | None = 2.0) -> list[tuple[int, int, float]]:
    """Constant-velocity centroid matching against live tracks.

    Each track's centroid advances by its last per-frame displacement times
    the frame gap before the distance cost is formed. Scores map cost c to
    1 / (1 + c) so closer matches carry higher confidence.
    """
    k = det_centroids.shape[0]
    m = len(track_set.tracks)
    if k == 0 or m == 0:
        return []
    preds = np.stack([t.centroid + t.velocity * max(frame_index - t.last_seen, 1)
                      for t in track_set.tracks])
    cost = np.linalg.norm(det_centroids[:, None, :] - preds[None, :, :], axis=2)
    pairs = match_by_cost(cost, method, gate)
    return [(i, j, 1.0 / (1.0 + float(cost[i, j]))) for i, j in pairs]
