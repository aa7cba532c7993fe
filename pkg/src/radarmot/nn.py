"""Dense-layer primitives with explicit reverse-mode gradients.

The network is small and fixed, so each layer type carries its own
forward/backward pair instead of a generic autodiff tape. Forward functions
return (output, cache); backward functions consume the cache, accumulate
parameter gradients into a plain dict, and return input gradients.

All math runs in float64. Weights use the convention y = x @ w + b with
w of shape (fan_in, fan_out).
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.1


def accumulate(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = np.array(value, dtype=float)


# ---------------------------------------------------------------------------
# elementwise

def leaky_relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def leaky_relu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# affine / MLP

def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def affine_backward(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def mlp_forward(x: np.ndarray, store, prefix: str, n_layers: int,
                final_activation: bool = False):
    """Stack of affine layers with leaky-relu between (and optionally after)."""
    caches = []
    h = x
    for i in range(n_layers):
        w = store[f"{prefix}.layer{i}.w"]
        b = store[f"{prefix}.layer{i}.b"]
        z, aff_cache = affine_forward(h, w, b)
        act = final_activation or i < n_layers - 1
        h = leaky_relu(z) if act else z
        caches.append((aff_cache, z if act else None))
    return h, (prefix, caches)


def mlp_backward(dy: np.ndarray, cache, grads: dict) -> np.ndarray:
    prefix, caches = cache
    d = dy
    for i in reversed(range(len(caches))):
        aff_cache, z = caches[i]
        if z is not None:
            d = d * leaky_relu_grad(z)
        d, dw, db = affine_backward(d, aff_cache)
        accumulate(grads, f"{prefix}.layer{i}.w", dw)
        accumulate(grads, f"{prefix}.layer{i}.b", db)
    return d


# ---------------------------------------------------------------------------
# pooling

def max_pool_forward(x: np.ndarray, axis: int):
    am = np.argmax(x, axis=axis)
    return np.max(x, axis=axis), (x.shape, am, axis)


def max_pool_backward(dy: np.ndarray, cache) -> np.ndarray:
    shape, am, axis = cache
    dx = np.zeros(shape)
    if axis == 0:
        dx[am, np.arange(shape[1])] = dy
    elif axis == 1:
        idx = np.indices(am.shape)
        dx[(idx[0], am) + tuple(idx[1:])] = dy
    else:
        raise ValueError("max_pool supports axis 0 or 1 only")
    return dx


# ---------------------------------------------------------------------------
# neighbor search (brute force; deterministic ties by lower index)

def knn_indices(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """(Q, k) indices of the k nearest `points` for each query.

    Ties break toward the lower point index. If fewer than k points exist,
    the available ones repeat cyclically (sampling with replacement).
    """
    n = points.shape[0]
    if n == 0:
        raise ValueError("knn_indices requires at least one reference point")
    d2 = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    if n >= k:
        return order[:, :k]
    reps = np.tile(order, (1, -(-k // n)))
    return reps[:, :k]


def ball_knn_indices(points: np.ndarray, radius: float, k: int) -> np.ndarray:
    """(N, k) self-neighborhoods: nearest points within `radius`, cycled to k.

    Every point is within its own neighborhood (distance zero), so at least
    one candidate always exists.
    """
    n = points.shape[0]
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    sorted_d2 = np.take_along_axis(d2, order, axis=1)
    within = sorted_d2 <= radius * radius
    counts = np.maximum(within.sum(axis=1), 1)
    out = np.empty((n, k), dtype=int)
    for i in range(n):
        c = min(counts[i], n)
        cand = order[i, :c]
        out[i] = np.tile(cand, -(-k // c))[:k]
    return out


# ---------------------------------------------------------------------------
# GRU cell (vector input/state)

def gru_forward(x: np.ndarray, h: np.ndarray, store, prefix: str = "gru"):
    p = {k: store[f"{prefix}.{k}"] for k in
         ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")}
    a_z = x @ p["w_z"] + h @ p["u_z"] + p["b_z"]
    a_r = x @ p["w_r"] + h @ p["u_r"] + p["b_r"]
    z = sigmoid(a_z)
    r = sigmoid(a_r)
    rh = r * h
    a_h = x @ p["w_h"] + rh @ p["u_h"] + p["b_h"]
    h_cand = np.tanh(a_h)
    h_new = (1.0 - z) * h + z * h_cand
    return h_new, (prefix, x, h, z, r, rh, h_cand, p)


def gru_backward(dh_new: np.ndarray, cache, grads: dict):
    prefix, x, h, z, r, rh, h_cand, p = cache
    dz = dh_new * (h_cand - h)
    dh_cand = dh_new * z
    dh = dh_new * (1.0 - z)

    da_h = dh_cand * (1.0 - h_cand ** 2)
    accumulate(grads, f"{prefix}.w_h", np.outer(x, da_h))
    accumulate(grads, f"{prefix}.u_h", np.outer(rh, da_h))
    accumulate(grads, f"{prefix}.b_h", da_h)
    dx = da_h @ p["w_h"].T
    drh = da_h @ p["u_h"].T
    dr = drh * h
    dh = dh + drh * r

    da_z = dz * z * (1.0 - z)
    accumulate(grads, f"{prefix}.w_z", np.outer(x, da_z))
    accumulate(grads, f"{prefix}.u_z", np.outer(h, da_z))
    accumulate(grads, f"{prefix}.b_z", da_z)
    dx = dx + da_z @ p["w_z"].T
    dh = dh + da_z @ p["u_z"].T

    da_r = dr * r * (1.0 - r)
    accumulate(grads, f"{prefix}.w_r", np.outer(x, da_r))
    accumulate(grads, f"{prefix}.u_r", np.outer(h, da_r))
    accumulate(grads, f"{prefix}.b_r", da_r)
    dx = dx + da_r @ p["w_r"].T
    dh = dh + da_r @ p["u_r"].T
    return dx, dh


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adaptive-moment optimizer over a subset of named tensors."""

    def __init__(self, names, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.names = list(names)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, store, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in self.names:
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(store[name])
                self.m[name] = m
                self.v[name] = np.zeros_like(store[name])
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            store[name] = store[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
