"""Backward scene-flow branch.

Mixed per-point features (position, radial velocities, backbone features,
cost volume) go through a second point feature encoder; its pooled global
vector runs through a GRU cell carrying temporal state across frames, and the
GRU output is broadcast back onto the per-point features to form the flow
embedding. A small MLP head decodes the embedding into one backward motion
vector per point (frame t to frame t-1, sensor coordinates of frame t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .backbone import BackboneFeatures, CostVolume, PfeConfig, pfe_backward, \
    pfe_forward, pfe_shapes
from .frames import RadarFrame
from .transforms import ValidationError


@dataclass(frozen=True)
class FlowEmbedding:
    per_point: np.ndarray  # (N, F_e + gru_dim)


@dataclass(frozen=True)
class SceneFlow:
    vectors: np.ndarray  # (N, 3), meters per frame interval


@dataclass
class GruState:
    """Recurrent temporal state. One instance per sequence, reset at start."""

    hidden: np.ndarray | None = None
    initialized: bool = False

    def reset(self) -> None:
        self.hidden = None
        self.initialized = False


def flow_shapes(cfg: PfeConfig, mixed_width: int,
                head_hidden: tuple[int, int] = (128, 64)) -> dict[str, tuple]:
    shapes = pfe_shapes(cfg, mixed_width, "flow_pfe")
    g = cfg.global_dim
    for gate in ("z", "r", "h"):
        shapes[f"gru.w_{gate}"] = (g, g)
        shapes[f"gru.u_{gate}"] = (g, g)
        shapes[f"gru.b_{gate}"] = (g,)
    emb_width = cfg.local_width + g
    shapes["flow_head.layer0.w"] = (emb_width, head_hidden[0])
    shapes["flow_head.layer0.b"] = (head_hidden[0],)
    shapes["flow_head.layer1.w"] = (head_hidden[0], head_hidden[1])
    shapes["flow_head.layer1.b"] = (head_hidden[1],)
    shapes["flow_head.layer2.w"] = (head_hidden[1], 3)
    shapes["flow_head.layer2.b"] = (3,)
    return shapes


def build_mixed_features(frame: RadarFrame, g: BackboneFeatures,
                         h: CostVolume) -> np.ndarray:
    """Rows of concat(position, rrv, rrv_compensated, backbone, cost volume)."""
    n = len(frame)
    g_pp = g.per_point
    if g_pp.shape[0] != n or h.per_point.shape[0] != n:
        raise ValidationError("mixed-feature row counts disagree")
    return np.hstack([frame.positions,
                      frame.rrv[:, None],
                      frame.rrv_compensated[:, None],
                      g_pp,
                      h.per_point])


def flow_embed(mixed: np.ndarray, cfg: PfeConfig, gru: GruState, store):
    """Returns (FlowEmbedding, cache) and advances `gru` in place.

    An uninitialized GruState treats the previous hidden vector as zeros.
    """
    if mixed.shape[0] == 0:
        raise ValidationError("flow_embed requires a non-empty frame")
    positions = mixed[:, :3]
    feats, pfe_cache = pfe_forward(positions, mixed, cfg, store, "flow_pfe")
    h_prev = gru.hidden if gru.initialized else np.zeros(cfg.global_dim)
    h_new, gru_cache = nn.gru_forward(feats.pooled, h_prev, store, "gru")
    gru.hidden = h_new.copy()
    gru.initialized = True
    n = mixed.shape[0]
    per_point = np.hstack([feats.local, np.tile(h_new, (n, 1))])
    cache = (cfg.local_width, pfe_cache, gru_cache)
    return FlowEmbedding(per_point), cache


def flow_embed_backward(d_per_point: np.ndarray, cache, store,
                        grads: dict) -> np.ndarray:
    """Gradient w.r.t. the mixed-feature matrix.

    The previous hidden state is held constant: temporal credit does not
    cross frame boundaries.
    """
    local_width, pfe_cache, gru_cache = cache
    d_local = d_per_point[:, :local_width]
    d_hidden = d_per_point[:, local_width:].sum(axis=0)
    d_pooled, _ = nn.gru_backward(d_hidden, gru_cache, grads)
    return pfe_backward(d_local, d_pooled, pfe_cache, store, grads)


def predict_flow(embedding: FlowEmbedding, store):
    """Row-wise 3-layer MLP head; linear output layer."""
    x = embedding.per_point
    if x.shape[0] == 0:
        return SceneFlow(np.zeros((0, 3))), None
    vectors, cache = nn.mlp_forward(x, store, "flow_head", 3)
    if not np.all(np.isfinite(vectors)):
        raise ValidationError("non-finite flow prediction")
    return SceneFlow(vectors), cache


def predict_flow_backward(d_vectors: np.ndarray, cache, grads: dict) -> np.ndarray:
    return nn.mlp_backward(d_vectors, cache, grads)
