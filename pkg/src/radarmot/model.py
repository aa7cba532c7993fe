"""Model assembly: configuration, weight shapes, and frame-level passes.

One ModelConfig fixes every architecture dimension, so the full set of
learnable tensors (and their shapes) derives from it. encode_frame runs the
whole per-frame network; frame_backward pushes loss gradients back through
the same pass. Previous-frame features and the incoming GRU hidden state are
treated as constants: temporal credit assignment stops at frame boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneFeatures, CostVolume, PfeConfig, \
    cost_volume, cost_volume_backward, cost_volume_shapes, pfe_backward, \
    pfe_forward, pfe_shapes
from .detector import DetectConfig, MotionScores, classify_motion, \
    classify_motion_backward, motion_shapes
from .flow import FlowEmbedding, GruState, SceneFlow, build_mixed_features, \
    flow_embed, flow_embed_backward, flow_shapes, predict_flow, \
    predict_flow_backward
from .frames import RadarFrame
from .associator import affinity_shapes, descriptor_width
from .weights import WeightStore, init_store

MIXED_PREFIX_WIDTH = 5  # position (3) + rrv + rrv_compensated


@dataclass(frozen=True)
class ModelConfig:
    pfe: PfeConfig = PfeConfig()
    flow_pfe: PfeConfig = PfeConfig(sa_channels=(32, 32, 64),
                                    fp_channels=(16, 16, 32),
                                    global_dim=128)
    cost_k: int = 8
    cost_channels: int = 128
    flow_head_hidden: tuple[int, int] = (128, 64)
    motion_hidden: int = 64
    affinity_hidden: tuple[int, int] = (64, 64)
    detect: DetectConfig = DetectConfig()
    sinkhorn_iterations: int = 30
    sinkhorn_temperature: float = 1.0
    match_threshold: float = 0.5
    use_velocity_features: bool = True
    use_motion_module: bool = True

    def validate(self) -> "ModelConfig":
        self.pfe.validate()
        self.flow_pfe.validate()
        self.detect.validate()
        if self.cost_k < 1 or self.cost_channels < 1:
            raise ValueError("cost volume dims must be >= 1")
        if self.sinkhorn_iterations < 1 or self.sinkhorn_temperature <= 0:
            raise ValueError("bad sinkhorn settings")
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValueError("match_threshold must lie in [0, 1]")
        if self.detect.embed_channels > self.embedding_width:
            raise ValueError("embed_channels exceeds embedding width")
        return self

    @property
    def input_feature_width(self) -> int:
        return 2 if self.use_velocity_features else 0

    @property
    def mixed_width(self) -> int:
        return MIXED_PREFIX_WIDTH + self.pfe.out_width + self.cost_channels

    @property
    def embedding_width(self) -> int:
        if self.use_motion_module:
            return self.flow_pfe.local_width + self.flow_pfe.global_dim
        return self.pfe.out_width

    @property
    def descriptor_width(self) -> int:
        return descriptor_width(self.detect.embed_channels)


def model_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    shapes.update(pfe_shapes(cfg.pfe, cfg.input_feature_width, "pfe"))
    shapes.update(cost_volume_shapes(cfg.pfe.out_width, cfg.cost_channels))
    if cfg.use_motion_module:
        shapes.update(flow_shapes(cfg.flow_pfe, cfg.mixed_width,
                                  cfg.flow_head_hidden))
    shapes.update(motion_shapes(cfg.cost_channels, cfg.motion_hidden))
    shapes.update(affinity_shapes(cfg.descriptor_width, cfg.affinity_hidden))
    return shapes


def init_model(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    manifest = {
        "velocity_features": cfg.use_velocity_features,
        "motion_module": cfg.use_motion_module,
        "cost_channels": cfg.cost_channels,
        "embed_channels": cfg.detect.embed_channels,
        "seed": seed,
    }
    return init_store(model_shapes(cfg), seed=seed, manifest=manifest)


def load_model(path, cfg: ModelConfig) -> WeightStore:
    return WeightStore.load(path, expected_shapes=model_shapes(cfg))


@dataclass
class FrameEncoding:
    """All per-frame network outputs plus the caches needed for backward."""

    frame: RadarFrame
    backbone: BackboneFeatures
    cost: CostVolume
    embedding: FlowEmbedding
    flow: SceneFlow
    scores: MotionScores
    caches: dict


def input_features(frame: RadarFrame, cfg: ModelConfig) -> np.ndarray:
    if cfg.use_velocity_features:
        return np.column_stack([frame.rrv, frame.rrv_compensated])
    return np.zeros((len(frame), 0))


def encode_frame(frame: RadarFrame, prev: FrameEncoding | None,
                 cfg: ModelConfig, store: WeightStore,
                 gru: GruState) -> FrameEncoding:
    """Full forward pass for one frame against its (optional) predecessor.

    An empty frame short-circuits to empty outputs and leaves `gru` alone.
    """
    n = len(frame)
    feats = input_features(frame, cfg)
    backbone_feats, pfe_cache = pfe_forward(frame.positions, feats, cfg.pfe,
                                            store, "pfe")
    prev_pos = prev.frame.positions if prev is not None else None
    prev_feat = prev.backbone.per_point if prev is not None else None
    cost, cost_cache = cost_volume(frame.positions, backbone_feats.per_point,
                                   prev_pos, prev_feat, cfg.cost_k,
                                   cfg.cost_channels, store)
    scores, motion_cache = classify_motion(cost, store)

    caches = {"pfe": pfe_cache, "cost": cost_cache, "motion": motion_cache,
              "embed": None, "flow": None}
    if n == 0:
        embedding = FlowEmbedding(np.zeros((0, cfg.embedding_width)))
        flow = SceneFlow(np.zeros((0, 3)))
    elif cfg.use_motion_module:
        mixed = build_mixed_features(frame, backbone_feats, cost)
        if not cfg.use_velocity_features:
            mixed = mixed.copy()
            mixed[:, 3:5] = 0.0
        embedding, emb_cache = flow_embed(mixed, cfg.flow_pfe, gru, store)
        flow, flow_cache = predict_flow(embedding, store)
        caches["embed"] = emb_cache
        caches["flow"] = flow_cache
    else:
        # ablation: no flow branch; reuse backbone features as the embedding
        embedding = FlowEmbedding(backbone_feats.per_point)
        flow = SceneFlow(np.zeros((n, 3)))
    return FrameEncoding(frame, backbone_feats, cost, embedding, flow,
                         scores, caches)


def frame_backward(enc: FrameEncoding, cfg: ModelConfig, store: WeightStore,
                   grads: dict, d_flow: np.ndarray | None = None,
                   d_scores: np.ndarray | None = None,
                   d_embedding: np.ndarray | None = None) -> None:
    """Accumulate weight gradients for one frame's losses into `grads`.

    `d_embedding` carries credit arriving through descriptor aggregation.
    Gradients w.r.t. raw frame inputs are discarded.
    """
    n = len(enc.frame)
    if n == 0:
        return
    fg = cfg.pfe.out_width
    d_backbone_pp = np.zeros((n, fg))
    d_cost_pp = np.zeros((n, cfg.cost_channels))

    if cfg.use_motion_module:
        d_emb = np.zeros((n, cfg.embedding_width))
        if d_embedding is not None:
            d_emb += d_embedding
        if d_flow is not None:
            d_emb += predict_flow_backward(d_flow, enc.caches["flow"], grads)
        if np.any(d_emb):
            d_mixed = flow_embed_backward(d_emb, enc.caches["embed"], store,
                                          grads)
            d_backbone_pp += d_mixed[:, MIXED_PREFIX_WIDTH:MIXED_PREFIX_WIDTH + fg]
            d_cost_pp += d_mixed[:, MIXED_PREFIX_WIDTH + fg:]
    elif d_embedding is not None:
        d_backbone_pp += d_embedding

    if d_scores is not None:
        d_cost_pp += classify_motion_backward(d_scores, enc.caches["motion"],
                                              grads)
    if enc.caches["cost"] is not None and np.any(d_cost_pp):
        d_backbone_pp += cost_volume_backward(d_cost_pp, enc.caches["cost"],
                                              store, grads)

    local_w = cfg.pfe.local_width
    d_local = d_backbone_pp[:, :local_w]
    d_pooled = d_backbone_pp[:, local_w:].sum(axis=0)
    pfe_backward(d_local, d_pooled, enc.caches["pfe"], store, grads)
