"""Point feature encoder (PFE) and inter-frame cost volume.

The PFE runs three multi-scale neighborhood branches in parallel (grouping by
radius, shared MLP, max over neighbors), propagates each branch through a
per-branch feature layer, and appends a max-pooled global vector to every
point. The cost volume correlates each current-frame point with its k nearest
previous-frame points through a shared MLP and an inverse-distance-weighted
sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .transforms import ValidationError

COST_DIST_EPS = 1e-8


@dataclass(frozen=True)
class PfeConfig:
    sa_radii: tuple[float, float, float] = (0.5, 1.0, 2.0)
    sa_neighbors: tuple[int, int, int] = (8, 16, 32)
    sa_channels: tuple[int, int, int] = (32, 64, 128)
    fp_channels: tuple[int, int, int] = (64, 64, 64)
    global_dim: int = 256

    def validate(self) -> "PfeConfig":
        if not (self.sa_radii[0] < self.sa_radii[1] < self.sa_radii[2]):
            raise ValidationError("sa_radii must be strictly increasing")
        if min(*self.sa_channels, *self.fp_channels, self.global_dim) <= 0:
            raise ValidationError("channel counts must be > 0")
        if min(self.sa_neighbors) <= 0:
            raise ValidationError("sa_neighbors must be > 0")
        return self

    @property
    def local_width(self) -> int:
        return sum(self.fp_channels)

    @property
    def out_width(self) -> int:
        return self.local_width + self.global_dim


@dataclass(frozen=True)
class BackboneFeatures:
    """Per-point features with the pooled global vector kept separately."""

    local: np.ndarray    # (N, local_width)
    pooled: np.ndarray   # (global_dim,)

    @property
    def per_point(self) -> np.ndarray:
        n = self.local.shape[0]
        return np.hstack([self.local, np.tile(self.pooled, (n, 1))]) \
            if n else np.zeros((0, self.local.shape[1] + self.pooled.shape[0]))


@dataclass(frozen=True)
class CostVolume:
    per_point: np.ndarray  # (N, channels)


def pfe_shapes(cfg: PfeConfig, in_features: int, prefix: str) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    for j, (c, fpc) in enumerate(zip(cfg.sa_channels, cfg.fp_channels)):
        shapes[f"{prefix}.sa{j}.layer0.w"] = (3 + in_features, c)
        shapes[f"{prefix}.sa{j}.layer0.b"] = (c,)
        shapes[f"{prefix}.sa{j}.layer1.w"] = (c, c)
        shapes[f"{prefix}.sa{j}.layer1.b"] = (c,)
        shapes[f"{prefix}.fp{j}.w"] = (c, fpc)
        shapes[f"{prefix}.fp{j}.b"] = (fpc,)
    shapes[f"{prefix}.prepool.w"] = (cfg.local_width, cfg.global_dim)
    shapes[f"{prefix}.prepool.b"] = (cfg.global_dim,)
    return shapes


def pfe_forward(positions: np.ndarray, features: np.ndarray, cfg: PfeConfig,
                store, prefix: str = "pfe"):
    """Returns (BackboneFeatures, cache). Empty input yields empty features."""
    n = positions.shape[0]
    if features.shape[0] != n:
        raise ValidationError("feature row count does not match point count")
    if n == 0:
        return BackboneFeatures(np.zeros((0, cfg.local_width)),
                                np.zeros(cfg.global_dim)), None

    branch_caches = []
    locals_ = []
    for j, (radius, k, _) in enumerate(zip(cfg.sa_radii, cfg.sa_neighbors, cfg.sa_channels)):
        idx = nn.ball_knn_indices(positions, radius, k)
        rel = positions[idx] - positions[:, None, :]
        pair = np.concatenate([rel, features[idx]], axis=2)
        flat = pair.reshape(n * k, -1)
        out_flat, mlp_cache = nn.mlp_forward(flat, store, f"{prefix}.sa{j}", 2,
                                             final_activation=True)
        grouped = out_flat.reshape(n, k, -1)
        local, pool_cache = nn.max_pool_forward(grouped, axis=1)
        branch_caches.append((idx, mlp_cache, pool_cache))
        locals_.append(local)

    # per-branch feature propagation (single affine + activation each)
    propagated = []
    fp_caches = []
    for j, local in enumerate(locals_):
        z, aff_cache = nn.affine_forward(local, store[f"{prefix}.fp{j}.w"],
                                         store[f"{prefix}.fp{j}.b"])
        propagated.append(nn.leaky_relu(z))
        fp_caches.append((aff_cache, z))
    local_cat = np.hstack(propagated)

    z_pp, pp_aff = nn.affine_forward(local_cat, store[f"{prefix}.prepool.w"],
                                     store[f"{prefix}.prepool.b"])
    prepool = nn.leaky_relu(z_pp)
    pooled, pool0_cache = nn.max_pool_forward(prepool, axis=0)

    assert local_cat.shape[1] + pooled.shape[0] == cfg.out_width
    if not (np.all(np.isfinite(local_cat)) and np.all(np.isfinite(pooled))):
        raise ValidationError("non-finite backbone features")
    cache = (prefix, cfg, branch_caches, fp_caches, (pp_aff, z_pp), pool0_cache,
             features.shape)
    return BackboneFeatures(local_cat, pooled), cache


def pfe_backward(d_local: np.ndarray, d_pooled: np.ndarray, cache, store,
                 grads: dict) -> np.ndarray:
    """Backward through the PFE; returns gradient w.r.t. input features."""
    prefix, cfg, branch_caches, fp_caches, (pp_aff, z_pp), pool0_cache, feat_shape = cache
    d_local = np.array(d_local, dtype=float)

    d_prepool = nn.max_pool_backward(d_pooled, pool0_cache)
    d_zpp = d_prepool * nn.leaky_relu_grad(z_pp)
    d_cat, dw, db = nn.affine_backward(d_zpp, pp_aff)
    nn.accumulate(grads, f"{prefix}.prepool.w", dw)
    nn.accumulate(grads, f"{prefix}.prepool.b", db)
    d_local = d_local + d_cat

    d_features = np.zeros(feat_shape)
    col = 0
    for j, fpc in enumerate(cfg.fp_channels):
        d_fp = d_local[:, col:col + fpc]
        col += fpc
        aff_cache, z = fp_caches[j]
        d_z = d_fp * nn.leaky_relu_grad(z)
        d_sa, dw, db = nn.affine_backward(d_z, aff_cache)
        nn.accumulate(grads, f"{prefix}.fp{j}.w", dw)
        nn.accumulate(grads, f"{prefix}.fp{j}.b", db)

        idx, mlp_cache, pool_cache = branch_caches[j]
        d_grouped = nn.max_pool_backward(d_sa, pool_cache)
        n, k, c = d_grouped.shape
        d_flat = nn.mlp_backward(d_grouped.reshape(n * k, c), mlp_cache, grads)
        d_pair = d_flat.reshape(n, k, -1)
        np.add.at(d_features, idx, d_pair[:, :, 3:])
    return d_features


def cost_volume_shapes(in_width: int, channels: int, prefix: str = "cost") -> dict[str, tuple]:
    return {
        f"{prefix}.layer0.w": (in_width + 3, channels),
        f"{prefix}.layer0.b": (channels,),
        f"{prefix}.layer1.w": (channels, channels),
        f"{prefix}.layer1.b": (channels,),
    }


def cost_volume(cur_positions: np.ndarray, cur_features: np.ndarray,
                prev_positions: np.ndarray | None, prev_features: np.ndarray | None,
                k: int, channels: int, store, prefix: str = "cost"):
    """Correlate current points against the previous frame.

    Missing or empty previous frame (sequence start) yields a zero volume.
    """
    n = cur_positions.shape[0]
    if prev_positions is None or prev_positions.shape[0] == 0 or n == 0:
        return CostVolume(np.zeros((n, channels))), None

    idx = nn.knn_indices(prev_positions, cur_positions, k)
    dvec = prev_positions[idx] - cur_positions[:, None, :]
    dist = np.linalg.norm(dvec, axis=2)
    inv = 1.0 / (dist + COST_DIST_EPS)
    wgt = inv / inv.sum(axis=1, keepdims=True)

    pair = np.concatenate([prev_features[idx] - cur_features[:, None, :], dvec], axis=2)
    flat = pair.reshape(n * k, -1)
    vals_flat, mlp_cache = nn.mlp_forward(flat, store, prefix, 2, final_activation=True)
    vals = vals_flat.reshape(n, k, channels)
    out = (wgt[:, :, None] * vals).sum(axis=1)

    assert out.shape == (n, channels)
    if not np.all(np.isfinite(out)):
        raise ValidationError("non-finite cost volume")
    cache = (idx, wgt, mlp_cache, cur_features.shape, channels)
    return CostVolume(out), cache


def cost_volume_backward(d_out: np.ndarray, cache, store, grads: dict) -> np.ndarray:
    """Gradient w.r.t. current-frame features (previous frame held constant)."""
    if cache is None:
        return None
    idx, wgt, mlp_cache, cur_shape, channels = cache
    n, k = wgt.shape
    d_vals = wgt[:, :, None] * d_out[:, None, :]
    d_flat = nn.mlp_backward(d_vals.reshape(n * k, channels), mlp_cache, grads)
    d_pair = d_flat.reshape(n, k, -1)
    d_cur = -d_pair[:, :, :cur_shape[1]].sum(axis=1)
    return d_cur
