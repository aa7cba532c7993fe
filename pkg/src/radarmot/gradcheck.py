"""Finite-difference verification of the analytic gradients.

Each tensor is probed along a seeded random unit direction: the analytic
gradient's projection onto that direction is compared against a central
difference of the loss. One probe per tensor keeps full-model checks fast
while still touching every entry with nonzero probability.

The comparison runs at three step sizes (step, step/10, step/100) and keeps
the smallest relative error. A wrong analytic formula disagrees with the
difference quotient at every step, so the ladder cannot hide real bugs;
disagreements caused by the probe straddling a leaky-relu kink or a pooling
argmax crossover shrink with the step and drop out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import ValidationError

REL_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_tensor: str
    per_tensor: dict

    def failing(self, tolerance: float) -> list[str]:
        return sorted(name for name, err in self.per_tensor.items()
                      if err > tolerance)


def grad_check(loss_fn, store, names=None, step: float = 1e-4,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients from `loss_fn` against central differences.

    loss_fn(store) -> (loss value, gradient dict). The store is restored to
    its original values afterwards. Tensors absent from the gradient dict
    count as all-zero analytic gradients. Each tensor is probed at `step`,
    `step / 10`, and `step / 100`; the smallest relative error counts (see
    module notes).
    """
    _, grads = loss_fn(store)
    names = list(names) if names is not None else sorted(store.names())
    rng = np.random.default_rng(seed)

    per_tensor: dict[str, float] = {}
    for name in names:
        base = store[name].copy()
        analytic = grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(base)
        if not np.all(np.isfinite(analytic)):
            raise ValidationError(f"non-finite analytic gradient: {name}")
        direction = rng.standard_normal(base.shape)
        direction /= max(np.linalg.norm(direction), REL_FLOOR)
        a = float((analytic * direction).sum())

        best = np.inf
        for eps in (step, step / 10.0, step / 100.0):
            store[name] = base + eps * direction
            plus, _ = loss_fn(store)
            store[name] = base - eps * direction
            minus, _ = loss_fn(store)
            store[name] = base
            f = (plus - minus) / (2.0 * eps)
            best = min(best, abs(a - f) / max(abs(a), abs(f), REL_FLOOR))
        per_tensor[name] = best

    worst = max(per_tensor, key=per_tensor.get) if per_tensor else ""
    worst_err = per_tensor[worst] if per_tensor else 0.0
    return GradCheckReport(worst_err, worst, per_tensor)


# ---------------------------------------------------------------------------
# ready-made toy problem: 16 points, two movers, full loss stack
#
# Structure (cluster membership, ground-truth labels, the previous frame's
# features and descriptors, and the incoming GRU state) is frozen from a base
# forward pass, matching the training-time contract that selection steps are
# constants. Only the current frame's pass is re-run under perturbed weights.

def toy_frame_pair(seed: int = 0, fps: float = 10.0):
    """Two 16-point frames: two 5-point movers plus 6 static points.

    Returns (frame0, frame1, groups, gt_flow, gt_mask, gt_affinity) where
    `groups` are the per-frame mover index groups (identical layouts).
    """
    from .frames import RadarFrame
    from .transforms import RigidTransform

    rng = np.random.default_rng(seed)
    centers = np.array([[2.0, 0.0, 0.0], [-2.0, 4.0, 0.0]])
    velocities = np.array([[1.0, 0.5, 0.0], [-1.2, 0.8, 0.1]])
    offsets = rng.uniform(-0.3, 0.3, size=(2, 5, 3))
    static = rng.uniform(-9.0, 9.0, size=(6, 3))
    static[:, 2] = rng.uniform(-0.5, 0.5, size=6)
    static[np.linalg.norm(static[:, :2], axis=1) < 5.0, :2] += 8.0

    frames = []
    for t in range(2):
        rows = [centers[g] + offsets[g, j] + velocities[g] * (t / fps)
                for g in range(2) for j in range(5)]
        pos = np.vstack([np.array(rows), static])
        vel = np.vstack([np.repeat(velocities, 5, axis=0), np.zeros((6, 3))])
        unit = pos / np.linalg.norm(pos, axis=1, keepdims=True)
        # sensor noise keeps every input row away from exact zero; exact
        # zeros would park pre-activations on the leaky-relu kink and make
        # central differences disagree with any one-sided derivative
        rrv = (unit * vel).sum(axis=1) + rng.normal(0.0, 0.05, size=len(pos))
        frames.append(RadarFrame(positions=pos, rrv=rrv,
                                 rrv_compensated=rrv,
                                 ego_pose=RigidTransform.identity(),
                                 timestamp=t / fps, frame_index=t))
    groups = [tuple(range(0, 5)), tuple(range(5, 10))]
    gt_flow = np.zeros((16, 3))
    gt_flow[0:5] = -velocities[0] / fps
    gt_flow[5:10] = -velocities[1] / fps
    gt_mask = np.array([1] * 10 + [0] * 6)
    gt_aff = np.eye(2, dtype=int)
    return frames[0], frames[1], groups, gt_flow, gt_mask, gt_aff


def build_toy_loss_fn(cfg, loss_cfg, store, which: str):
    """loss_fn(store) over the toy pair for one loss ("flow"/"seg"/"aff")
    or the weighted composite ("total")."""
    from .associator import affinity, affinity_backward, \
        aggregate_descriptor, aggregate_descriptor_backward, sinkhorn, \
        sinkhorn_backward
    from .detector import clusters_from_indices
    from .flow import GruState
    from .losses import loss_aff, loss_flow, loss_seg
    from .model import encode_frame, frame_backward

    f0, f1, groups, gt_flow, gt_mask, gt_aff = toy_frame_pair()
    gru0 = GruState()
    enc0 = encode_frame(f0, None, cfg, store, gru0)
    h_prev = gru0.hidden.copy() if gru0.initialized else None
    prev_clusters = clusters_from_indices(groups, enc0.flow, enc0.embedding,
                                          cfg.detect)
    prev_descs = [aggregate_descriptor(c, f0)[0] for c in prev_clusters]

    weights = {
        "flow": (1.0, 0.0, 0.0),
        "seg": (0.0, 1.0, 0.0),
        "aff": (0.0, 0.0, 1.0),
        "total": (loss_cfg.alpha1, loss_cfg.alpha2, loss_cfg.alpha3),
    }[which]
    w_f, w_s, w_a = weights

    def loss_fn(st):
        gru = GruState(hidden=None if h_prev is None else h_prev.copy(),
                       initialized=h_prev is not None)
        enc = encode_frame(f1, enc0, cfg, st, gru)
        grads: dict = {}
        value = 0.0

        flow_v, d_flow = loss_flow(enc.flow.vectors, gt_flow)
        seg_v, d_scores = loss_seg(enc.scores.scores, gt_mask, loss_cfg.beta,
                                   loss_cfg.log_epsilon)
        d_flow_eff = w_f * d_flow
        d_emb = np.zeros((len(f1), cfg.embedding_width))
        value += w_f * flow_v + w_s * seg_v

        if w_a:
            clusters = clusters_from_indices(groups, enc.flow, enc.embedding,
                                             cfg.detect)
            descs, caches = [], []
            for c in clusters:
                d, cache = aggregate_descriptor(c, f1)
                descs.append(d)
                caches.append(cache)
            raw, aff_cache = affinity(descs, prev_descs, st)
            norm, sink_cache = sinkhorn(raw, cfg.sinkhorn_iterations,
                                        cfg.sinkhorn_temperature)
            aff_v, d_norm = loss_aff(norm, gt_aff, loss_cfg.log_epsilon)
            value += w_a * aff_v
            d_raw = sinkhorn_backward(w_a * d_norm, sink_cache)
            d_desc_new, _ = affinity_backward(d_raw, aff_cache, grads)
            for k, c in enumerate(clusters):
                d_fr, d_er = aggregate_descriptor_backward(d_desc_new[k],
                                                           caches[k])
                members = np.asarray(c.point_indices, dtype=int)
                d_flow_eff[members] += d_fr
                d_emb[members, :cfg.detect.embed_channels] += d_er

        frame_backward(enc, cfg, st, grads,
                       d_flow=d_flow_eff if (w_f or w_a) else None,
                       d_scores=w_s * d_scores if w_s else None,
                       d_embedding=d_emb if np.any(d_emb) else None)
        return value, grads

    return loss_fn


def toy_check_names(store, which: str) -> list[str]:
    """Tensors on the gradient path of each toy loss."""
    names = sorted(store.names())
    if which == "flow":
        return [n for n in names
                if not n.startswith(("affinity.", "motion_head."))]
    if which == "seg":
        return [n for n in names
                if n.startswith(("pfe.", "cost.", "motion_head."))]
    if which == "aff":
        return [n for n in names if not n.startswith("motion_head.")]
    return names


def check_losses(cfg, loss_cfg, step: float = 1e-4, seed: int = 0,
                 parts=("flow", "seg", "aff", "total")) -> dict:
    """GradCheckReport per loss part on the 16-point toy pair."""
    from .model import init_model

    reports = {}
    for which in parts:
        store = init_model(cfg, seed)
        loss_fn = build_toy_loss_fn(cfg, loss_cfg, store, which)
        reports[which] = grad_check(loss_fn, store,
                                    names=toy_check_names(store, which),
                                    step=step, seed=seed)
    return reports
