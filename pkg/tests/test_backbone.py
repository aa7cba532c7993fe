import numpy as np
import pytest

from radarmot import nn
from radarmot.backbone import (
    PfeConfig,
    cost_volume,
    cost_volume_backward,
    cost_volume_shapes,
    pfe_backward,
    pfe_forward,
    pfe_shapes,
)
from radarmot.transforms import ValidationError
from radarmot.weights import init_store

SMALL = PfeConfig(sa_radii=(0.6, 1.2, 2.4), sa_neighbors=(2, 3, 4),
                  sa_channels=(4, 5, 6), fp_channels=(3, 3, 2), global_dim=7)


def leaky(x):
    return np.where(x > 0, x, 0.1 * x)


def ref_pfe(positions, features, cfg, store, prefix="pfe"):
    """Per-point loop re-derivation of the three-branch encoder."""
    n = len(positions)
    blocks = []
    for j, (radius, k) in enumerate(zip(cfg.sa_radii, cfg.sa_neighbors)):
        rows = []
        for i in range(n):
            d = np.linalg.norm(positions - positions[i], axis=1)
            cand = [m for m in np.argsort(d, kind="stable") if d[m] <= radius]
            sel = [cand[t % len(cand)] for t in range(k)]
            outs = []
            for s in sel:
                inp = np.concatenate([positions[s] - positions[i], features[s]])
                h = leaky(inp @ store[f"{prefix}.sa{j}.layer0.w"]
                          + store[f"{prefix}.sa{j}.layer0.b"])
                outs.append(leaky(h @ store[f"{prefix}.sa{j}.layer1.w"]
                                  + store[f"{prefix}.sa{j}.layer1.b"]))
            rows.append(np.max(outs, axis=0))
        z = np.array(rows) @ store[f"{prefix}.fp{j}.w"] + store[f"{prefix}.fp{j}.b"]
        blocks.append(leaky(z))
    local = np.hstack(blocks)
    prepool = leaky(local @ store[f"{prefix}.prepool.w"]
                    + store[f"{prefix}.prepool.b"])
    return local, prepool.max(axis=0)


def ref_cost(cur_pos, cur_feat, prev_pos, prev_feat, k, store, prefix="cost"):
    n = len(cur_pos)
    out = []
    for i in range(n):
        d = np.linalg.norm(prev_pos - cur_pos[i], axis=1)
        order = np.argsort(d, kind="stable")
        sel = [order[t % len(order)] for t in range(k)]
        vals, ws = [], []
        for s in sel:
            dvec = prev_pos[s] - cur_pos[i]
            inp = np.concatenate([prev_feat[s] - cur_feat[i], dvec])
            h = leaky(inp @ store[f"{prefix}.layer0.w"] + store[f"{prefix}.layer0.b"])
            vals.append(leaky(h @ store[f"{prefix}.layer1.w"]
                              + store[f"{prefix}.layer1.b"]))
            ws.append(1.0 / (np.linalg.norm(dvec) + 1e-8))
        ws = np.array(ws)
        ws = ws / ws.sum()
        out.append((np.array(vals) * ws[:, None]).sum(axis=0))
    return np.array(out)


def make_inputs(rng, n=12, in_features=5):
    positions = rng.uniform(-2, 2, (n, 3))
    features = rng.standard_normal((n, in_features))
    return positions, features


class TestPfe:
    def test_matches_loop_reference(self, rng):
        store = init_store(pfe_shapes(SMALL, 5, "pfe"), seed=3)
        positions, features = make_inputs(rng)
        feats, _ = pfe_forward(positions, features, SMALL, store)
        local, pooled = ref_pfe(positions, features, SMALL, store)
        assert np.allclose(feats.local, local, atol=1e-10)
        assert np.allclose(feats.pooled, pooled, atol=1e-10)

    def test_widths(self, rng):
        assert SMALL.local_width == 8
        assert SMALL.out_width == 15
        store = init_store(pfe_shapes(SMALL, 5, "pfe"), seed=0)
        positions, features = make_inputs(rng)
        feats, _ = pfe_forward(positions, features, SMALL, store)
        assert feats.local.shape == (12, 8)
        assert feats.pooled.shape == (7,)
        assert feats.per_point.shape == (12, 15)
        assert np.array_equal(feats.per_point[:, 8:], np.tile(feats.pooled, (12, 1)))

    def test_empty_input(self):
        store = init_store(pfe_shapes(SMALL, 5, "pfe"), seed=0)
        feats, cache = pfe_forward(np.zeros((0, 3)), np.zeros((0, 5)), SMALL, store)
        assert feats.local.shape == (0, 8)
        assert np.array_equal(feats.pooled, np.zeros(7))
        assert feats.per_point.shape == (0, 15)
        assert cache is None

    def test_permutation_equivariance(self, rng):
        store = init_store(pfe_shapes(SMALL, 5, "pfe"), seed=1)
        positions, features = make_inputs(rng)
        perm = rng.permutation(len(positions))
        a, _ = pfe_forward(positions, features, SMALL, store)
        b, _ = pfe_forward(positions[perm], features[perm], SMALL, store)
        assert np.allclose(b.local, a.local[perm], atol=1e-12)
        assert np.allclose(b.pooled, a.pooled, atol=1e-12)

    def test_mismatched_rows_rejected(self, rng):
        store = init_store(pfe_shapes(SMALL, 5, "pfe"), seed=0)
        with pytest.raises(ValidationError):
            pfe_forward(np.zeros((4, 3)), np.zeros((3, 5)), SMALL, store)

    def test_backward_matches_numeric(self, rng):
        store = init_store(pfe_shapes(SMALL, 4, "pfe"), seed=2)
        positions = rng.uniform(-1.5, 1.5, (6, 3))
        features = rng.standard_normal((6, 4))
        d_local = rng.standard_normal((6, 8))
        d_pooled = rng.standard_normal(7)

        def loss():
            f, _ = pfe_forward(positions, features, SMALL, store)
            return float((f.local * d_local).sum() + (f.pooled * d_pooled).sum())

        _, cache = pfe_forward(positions, features, SMALL, store)
        grads: dict = {}
        d_feat = pfe_backward(d_local, d_pooled, cache, store, grads)

        eps = 1e-6
        num = np.zeros_like(features)
        for i in range(6):
            for j in range(4):
                orig = features[i, j]
                features[i, j] = orig + eps
                hi = loss()
                features[i, j] = orig - eps
                lo = loss()
                features[i, j] = orig
                num[i, j] = (hi - lo) / (2 * eps)
        assert np.allclose(d_feat, num, atol=1e-5)

        name = "pfe.fp1.w"
        w = store[name]
        num_w = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = w[i, j]
                w[i, j] = orig + eps
                hi = loss()
                w[i, j] = orig - eps
                lo = loss()
                w[i, j] = orig
                num_w[i, j] = (hi - lo) / (2 * eps)
        assert np.allclose(grads[name], num_w, atol=1e-5)


class TestPfeConfig:
    def test_radii_must_increase(self):
        with pytest.raises(ValidationError):
            PfeConfig(sa_radii=(1.0, 1.0, 2.0)).validate()

    def test_positive_channels(self):
        with pytest.raises(ValidationError):
            PfeConfig(global_dim=0).validate()
        with pytest.raises(ValidationError):
            PfeConfig(sa_neighbors=(0, 16, 32)).validate()

    def test_default_widths(self):
        cfg = PfeConfig().validate()
        assert cfg.local_width == 192
        assert cfg.out_width == 448


class TestCostVolume:
    def test_matches_loop_reference(self, rng):
        store = init_store(cost_volume_shapes(6, 5), seed=4)
        cur_pos = rng.uniform(-2, 2, (9, 3))
        cur_feat = rng.standard_normal((9, 6))
        prev_pos = rng.uniform(-2, 2, (7, 3))
        prev_feat = rng.standard_normal((7, 6))
        vol, _ = cost_volume(cur_pos, cur_feat, prev_pos, prev_feat, 3, 5, store)
        assert np.allclose(vol.per_point,
                           ref_cost(cur_pos, cur_feat, prev_pos, prev_feat, 3, store),
                           atol=1e-10)

    def test_cycles_when_prev_smaller_than_k(self, rng):
        store = init_store(cost_volume_shapes(4, 3), seed=0)
        cur_pos = rng.uniform(-1, 1, (4, 3))
        cur_feat = rng.standard_normal((4, 4))
        prev_pos = rng.uniform(-1, 1, (2, 3))
        prev_feat = rng.standard_normal((2, 4))
        vol, _ = cost_volume(cur_pos, cur_feat, prev_pos, prev_feat, 5, 3, store)
        assert np.allclose(vol.per_point,
                           ref_cost(cur_pos, cur_feat, prev_pos, prev_feat, 5, store),
                           atol=1e-10)

    def test_missing_prev_yields_zeros(self, rng):
        store = init_store(cost_volume_shapes(4, 6), seed=0)
        cur_pos = rng.uniform(-1, 1, (5, 3))
        cur_feat = rng.standard_normal((5, 4))
        for prev in [(None, None), (np.zeros((0, 3)), np.zeros((0, 4)))]:
            vol, cache = cost_volume(cur_pos, cur_feat, prev[0], prev[1], 3, 6, store)
            assert np.array_equal(vol.per_point, np.zeros((5, 6)))
            assert cache is None

    def test_coincident_neighbor_dominates(self, rng):
        store = init_store(cost_volume_shapes(3, 4), seed=1)
        cur_pos = np.array([[0.0, 0, 0]])
        cur_feat = rng.standard_normal((1, 3))
        prev_pos = np.array([[0.0, 0, 0], [5.0, 0, 0]])
        prev_feat = rng.standard_normal((2, 3))
        vol, _ = cost_volume(cur_pos, cur_feat, prev_pos, prev_feat, 2, 4, store)
        # inverse-distance weight of the coincident point is ~1e8 vs 0.2
        inp = np.concatenate([prev_feat[0] - cur_feat[0], np.zeros(3)])
        h = leaky(inp @ store["cost.layer0.w"] + store["cost.layer0.b"])
        near_val = leaky(h @ store["cost.layer1.w"] + store["cost.layer1.b"])
        assert np.allclose(vol.per_point[0], near_val, atol=1e-6)

    def test_weights_sum_to_one_invariant(self, rng):
        # constant MLP output => weighted sum reproduces that constant
        store = init_store(cost_volume_shapes(2, 3), seed=0)
        for name in ("cost.layer0.w", "cost.layer1.w"):
            store[name] = np.zeros_like(store[name])
        store["cost.layer0.b"] = np.abs(store["cost.layer0.b"]) + 0.5
        store["cost.layer1.b"] = np.array([1.0, -2.0, 3.0])
        cur_pos = rng.uniform(-1, 1, (6, 3))
        prev_pos = rng.uniform(-1, 1, (5, 3))
        vol, _ = cost_volume(cur_pos, rng.standard_normal((6, 2)), prev_pos,
                             rng.standard_normal((5, 2)), 3, 3, store)
        expect = np.where(store["cost.layer1.b"] > 0, store["cost.layer1.b"],
                          0.1 * store["cost.layer1.b"])
        assert np.allclose(vol.per_point, np.tile(expect, (6, 1)), atol=1e-10)

    def test_backward_matches_numeric(self, rng):
        store = init_store(cost_volume_shapes(4, 3), seed=5)
        cur_pos = rng.uniform(-1, 1, (5, 3))
        cur_feat = rng.standard_normal((5, 4))
        prev_pos = rng.uniform(-1, 1, (6, 3))
        prev_feat = rng.standard_normal((6, 4))
        d_out = rng.standard_normal((5, 3))

        def loss():
            v, _ = cost_volume(cur_pos, cur_feat, prev_pos, prev_feat, 3, 3, store)
            return float((v.per_point * d_out).sum())

        _, cache = cost_volume(cur_pos, cur_feat, prev_pos, prev_feat, 3, 3, store)
        grads: dict = {}
        d_cur = cost_volume_backward(d_out, cache, store, grads)

        eps = 1e-6
        num = np.zeros_like(cur_feat)
        for i in range(5):
            for j in range(4):
                orig = cur_feat[i, j]
                cur_feat[i, j] = orig + eps
                hi = loss()
                cur_feat[i, j] = orig - eps
                lo = loss()
                cur_feat[i, j] = orig
                num[i, j] = (hi - lo) / (2 * eps)
        assert np.allclose(d_cur, num, atol=1e-5)
        assert "cost.layer0.w" in grads and "cost.layer1.w" in grads

    def test_backward_none_cache_passthrough(self):
        assert cost_volume_backward(np.zeros((2, 3)), None, None, {}) is None
