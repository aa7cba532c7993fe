"""Multi-task losses with analytic gradients.

Flow: mean squared Euclidean error. Segmentation: class-balanced negative
log-likelihood where the static and moving classes are averaged separately
and mixed by beta (an absent class contributes zero). Affinity: mean binary
cross-entropy over all matrix entries. Probabilities are clamped before
logs; the clamp is flat, so clamped entries carry zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import warn_count
from .transforms import ValidationError


@dataclass(frozen=True)
class LossConfig:
    alpha1: float = 0.5   # flow term
    alpha2: float = 0.5   # segmentation term
    alpha3: float = 1.0   # affinity term
    beta: float = 0.4     # static-class weight inside the segmentation loss
    log_epsilon: float = 1e-7
    motion_label_threshold: float = 0.05  # meters per frame interval

    def validate(self) -> "LossConfig":
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValidationError("loss weights must be >= 0")
        if not 0.0 < self.beta < 1.0:
            raise ValidationError("beta must lie in (0, 1)")
        if not 0.0 < self.log_epsilon < 0.5:
            raise ValidationError("log_epsilon must lie in (0, 0.5)")
        return self


def loss_flow(pred: np.ndarray, gt: np.ndarray):
    """(1/N) sum ||pred_i - gt_i||^2 and its gradient w.r.t. pred."""
    if pred.shape != gt.shape:
        raise ValidationError("flow shapes disagree")
    n = pred.shape[0]
    if n == 0:
        warn_count("loss_flow_empty")
        return 0.0, np.zeros_like(pred)
    diff = pred - gt
    value = float((diff ** 2).sum() / n)
    return value, 2.0 * diff / n


def loss_seg(scores: np.ndarray, gt_mask: np.ndarray, beta: float,
             eps: float = 1e-7):
    """Class-balanced NLL over per-point moving probabilities.

    beta weighs the static average, (1 - beta) the moving average. Returns
    (value, gradient w.r.t. scores).
    """
    if scores.shape != gt_mask.shape:
        raise ValidationError("segmentation shapes disagree")
    if scores.size == 0:
        raise ValidationError("segmentation loss needs at least one point")
    c = np.clip(scores, eps, 1.0 - eps)
    inside = (scores > eps) & (scores < 1.0 - eps)
    moving = gt_mask == 1
    static = ~moving
    n_mov = int(moving.sum())
    n_sta = int(static.sum())

    value = 0.0
    grad = np.zeros_like(scores)
    if n_sta:
        value += beta * float(-np.log(1.0 - c[static]).sum() / n_sta)
        grad[static] = beta / ((1.0 - c[static]) * n_sta)
    if n_mov:
        value += (1.0 - beta) * float(-np.log(c[moving]).sum() / n_mov)
        grad[moving] = -(1.0 - beta) / (c[moving] * n_mov)
    grad[~inside] = 0.0
    return value, grad


def loss_aff(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-7):
    """Mean binary cross-entropy over all K*M entries; empty matrix -> 0."""
    if pred.shape != gt.shape:
        raise ValidationError("affinity shapes disagree")
    if pred.size == 0:
        warn_count("loss_aff_empty")
        return 0.0, np.zeros_like(pred)
    a = np.clip(pred, eps, 1.0 - eps)
    inside = (pred > eps) & (pred < 1.0 - eps)
    g = gt.astype(float)
    value = float(-(g * np.log(a) + (1.0 - g) * np.log(1.0 - a)).mean())
    grad = (-g / a + (1.0 - g) / (1.0 - a)) / pred.size
    grad[~inside] = 0.0
    return value, grad


def loss_total(flow_value: float, seg_value: float, aff_value: float,
               cfg: LossConfig) -> float:
    parts = (flow_value, seg_value, aff_value)
    if not all(np.isfinite(parts)):
        raise ValidationError("non-finite loss part")
    return cfg.alpha1 * flow_value + cfg.alpha2 * seg_value \
        + cfg.alpha3 * aff_value
