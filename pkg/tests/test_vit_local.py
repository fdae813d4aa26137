import math

import numpy as np
import pytest

from scenedistill import vit_local
from scenedistill.regions import PatchAssignment, assign_patches
from scenedistill.superpixel import SuperpixelMap
from scenedistill.vit_local import (ViTConfig, broadcast_superpixel_features,
                                    forward_tokens, forward_with_local_tokens,
                                    patchify_and_embed, random_weights,
                                    restricted_attention)


def brute_force_restricted(q, k, v, token_sets, heads):
    """Scalar f64 evaluation of per-head softmax attention over each
    assigned patch set (the independent oracle for the restricted path)."""
    n, d = q.shape
    dh = d // heads
    out = np.zeros((n, d))
    for j, s in enumerate(token_sets):
        for h in range(heads):
            lo, hi = h * dh, (h + 1) * dh
            qs = q[j, lo:hi].astype(np.float64)
            scores = [float(qs @ k[i, lo:hi].astype(np.float64)) / math.sqrt(dh) for i in s]
            m = max(scores)
            es = [math.exp(sc - m) for sc in scores]
            tot = sum(es)
            acc = np.zeros(dh)
            for e, i in zip(es, s):
                acc += (e / tot) * v[i, lo:hi].astype(np.float64)
            out[j, lo:hi] = acc
    return out


def full_assignment(cfg: ViTConfig, token_sets) -> PatchAssignment:
    return PatchAssignment(np.zeros(cfg.n_patches, np.int32), cfg.grid,
                           token_sets, [])


class TestRestrictedAttention:
    def test_singleton_set_returns_value(self, rng):
        q = rng.standard_normal((3, 8)).astype(np.float32)
        k = rng.standard_normal((5, 8)).astype(np.float32)
        v = rng.standard_normal((5, 8)).astype(np.float32)
        sets = [np.array([4]), np.array([0]), np.array([2])]
        out = restricted_attention(q, k, v, sets, heads=2)
        assert np.array_equal(out, v[[4, 0, 2]])

    def test_uniform_scores_average_values(self, rng):
        q = np.zeros((1, 8), dtype=np.float32)  # zero query -> uniform softmax
        k = rng.standard_normal((6, 8)).astype(np.float32)
        v = rng.standard_normal((6, 8)).astype(np.float32)
        out = restricted_attention(q, k, v, [np.array([1, 3, 5])], heads=2)
        np.testing.assert_allclose(out[0], v[[1, 3, 5]].mean(axis=0), rtol=1e-6)

    def test_two_patch_hand_weights(self):
        """q.k1/sqrt(dh)=1 and q.k2/sqrt(dh)=0 give weights (e/(e+1), 1/(e+1))."""
        d, heads = 4, 1
        q = np.array([[2.0, 0, 0, 0]], dtype=np.float32)
        k = np.array([[1.0, 0, 0, 0], [0, 0, 0, 0]], dtype=np.float32)
        v = np.array([[1.0, 2, 3, 4], [5, 6, 7, 8]], dtype=np.float32)
        out = restricted_attention(q, k, v, [np.array([0, 1])], heads)
        e = math.e
        want = (e / (e + 1)) * v[0].astype(np.float64) + (1 / (e + 1)) * v[1]
        np.testing.assert_allclose(out[0], want, atol=1e-6)

    def test_matches_brute_force_oracle_100_fixtures(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for trial in range(100):
            heads = int(rng.choice([1, 2, 4]))
            dh = int(rng.choice([2, 4, 8]))
            d = heads * dh
            m = int(rng.integers(2, 12))
            n = int(rng.integers(1, 6))
            q = rng.standard_normal((n, d)).astype(np.float32)
            k = rng.standard_normal((m, d)).astype(np.float32)
            v = rng.standard_normal((m, d)).astype(np.float32)
            sets = [np.sort(rng.choice(m, size=int(rng.integers(1, m + 1)), replace=False))
                    for _ in range(n)]
            got = restricted_attention(q, k, v, sets, heads)
            want = brute_force_restricted(q, k, v, sets, heads)
            worst = max(worst, float(np.abs(got - want).max()))
        assert worst < 1e-5, worst

    def test_softmax_weights_sum_to_one(self, rng):
        # reconstructed from outputs: with v = identity basis the attended
        # vector's coordinates are the weights themselves
        m = 6
        q = rng.standard_normal((2, m)).astype(np.float32)
        k = rng.standard_normal((m, m)).astype(np.float32)
        v = np.eye(m, dtype=np.float32)
        sets = [np.array([0, 2, 4]), np.array([1, 2, 3, 5])]
        out = restricted_attention(q, k, v, sets, heads=1)
        for j, s in enumerate(sets):
            assert abs(out[j].sum() - 1.0) < 1e-6
            off = np.setdiff1d(np.arange(m), s)
            assert np.all(out[j, off] == 0)

    def test_empty_set_rejected(self, rng):
        q = rng.standard_normal((1, 4)).astype(np.float32)
        k = rng.standard_normal((2, 4)).astype(np.float32)
        with pytest.raises(ValueError):
            restricted_attention(q, k, k, [np.array([], dtype=int)], heads=1)


class TestPatchify:
    def test_zero_image_zero_embed_gives_pos(self, toy_cfg, toy_weights):
        w = toy_weights
        w.patch_embed = np.zeros_like(w.patch_embed)
        img = np.zeros((16, 16, 3), dtype=np.float32)
        state = patchify_and_embed(img, w, n_locals=0)
        assert np.array_equal(state.patch_tokens, w.pos_embed[1:])
        assert np.array_equal(state.global_token, w.class_token + w.pos_embed[0])

    def test_locals_copy_global(self, toy_weights):
        img = np.zeros((16, 16, 3), dtype=np.float32)
        state = patchify_and_embed(img, toy_weights, n_locals=4)
        for j in range(4):
            assert np.array_equal(state.local_tokens[j], state.global_token)

    def test_n0_empty_locals(self, toy_weights):
        img = np.zeros((16, 16, 3), dtype=np.float32)
        state = patchify_and_embed(img, toy_weights, n_locals=0)
        assert state.local_tokens.shape == (0, 16)

    def test_wrong_size_rejected(self, toy_weights):
        with pytest.raises(ValueError):
            patchify_and_embed(np.zeros((8, 8, 3), np.float32), toy_weights, 0)


class TestNonInterference:
    @pytest.mark.parametrize("n_locals", [1, 5, 50])
    def test_trajectories_bit_identical(self, toy_cfg, toy_weights, rng, n_locals):
        img = rng.random((16, 16, 3), dtype=np.float32)
        sets = [np.array([i % toy_cfg.n_patches]) for i in range(n_locals)]
        base, with_locals = [], []
        loc0, g0 = forward_tokens(img, toy_weights, full_assignment(toy_cfg, []), 0,
                                  trace=base)
        loc, g = forward_tokens(img, toy_weights, full_assignment(toy_cfg, sets),
                                n_locals, trace=with_locals)
        assert loc0.shape == (0, toy_cfg.embed_dim)
        assert loc.shape == (n_locals, toy_cfg.embed_dim)
        assert np.array_equal(g0, g)
        assert len(base) == len(with_locals) == toy_cfg.layers + 1
        for a, b in zip(base, with_locals):
            assert np.array_equal(a, b)

    def test_identical_token_sets_identical_features(self, toy_cfg, toy_weights, rng):
        img = rng.random((16, 16, 3), dtype=np.float32)
        sets = [np.array([1, 3, 7]), np.array([1, 3, 7]), np.array([0])]
        loc, _ = forward_tokens(img, toy_weights, full_assignment(toy_cfg, sets), 3)
        assert np.array_equal(loc[0], loc[1])
        assert not np.array_equal(loc[0], loc[2])


class TestForward:
    def _blocks_map(self):
        labels = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 8, 0), 8, 1)
        cents = np.array([[3.5, 3.5], [11.5, 3.5], [3.5, 11.5], [11.5, 11.5]],
                         dtype=np.float32)
        return SuperpixelMap(labels.astype(np.int32), 4, cents)

    def test_forward_shapes(self, toy_weights, rng):
        crop = rng.integers(0, 255, (16, 16, 3)).astype(np.uint8)
        feats, g = forward_with_local_tokens(crop, self._blocks_map(), toy_weights)
        assert feats.shape == (4, 8)
        assert g.shape == (8,)

    def test_label_permutation_equivariance(self, toy_weights, rng):
        crop = rng.integers(0, 255, (16, 16, 3)).astype(np.uint8)
        sp = self._blocks_map()
        feats, _ = forward_with_local_tokens(crop, sp, toy_weights)
        perm = np.array([2, 0, 3, 1])
        inv = np.argsort(perm)
        sp2 = SuperpixelMap(perm[sp.labels].astype(np.int32), 4,
                            sp.centroids[inv])
        feats2, _ = forward_with_local_tokens(crop, sp2, toy_weights)
        assert np.array_equal(feats2, feats[inv])

    def test_upsampled_crop_path(self, toy_weights, rng):
        # a non-square crop goes through bilinear upsampling first
        crop = rng.integers(0, 255, (10, 12, 3)).astype(np.uint8)
        labels = np.zeros((10, 12), dtype=np.int32)
        labels[:, 6:] = 1
        sp = SuperpixelMap(labels, 2, np.array([[2.5, 4.5], [8.5, 4.5]], np.float32))
        feats, _ = forward_with_local_tokens(crop, sp, toy_weights)
        assert feats.shape == (2, 8)
        assert np.all(np.isfinite(feats))


class TestBroadcast:
    def test_single_segment_constant(self):
        sp = SuperpixelMap(np.zeros((4, 6), np.int32), 1, np.zeros((1, 2), np.float32))
        f = np.array([[1.0, 2.0]], dtype=np.float32)
        out = broadcast_superpixel_features(f, sp)
        assert out.shape == (4, 6, 2)
        assert np.all(out == f[0])

    def test_two_segments_exact_regions(self):
        labels = np.zeros((4, 4), np.int32)
        labels[:, 2:] = 1
        sp = SuperpixelMap(labels, 2, np.zeros((2, 2), np.float32))
        f = np.eye(2, dtype=np.float32)
        out = broadcast_superpixel_features(f, sp)
        assert np.all(out[:, :2] == f[0])
        assert np.all(out[:, 2:] == f[1])

    def test_roundtrip_segment_means(self, rng):
        labels = rng.integers(0, 5, (12, 9)).astype(np.int32)
        # ensure every label occurs
        labels.ravel()[:5] = np.arange(5)
        sp = SuperpixelMap(labels, 5, np.zeros((5, 2), np.float32))
        f = rng.standard_normal((5, 3)).astype(np.float32)
        out = broadcast_superpixel_features(f, sp)
        for j in range(5):
            np.testing.assert_allclose(out[labels == j].mean(axis=0), f[j], rtol=1e-6)

    def test_out_of_range_label(self):
        sp = SuperpixelMap(np.full((2, 2), 3, np.int32), 1, np.zeros((1, 2), np.float32))
        with pytest.raises(ValueError):
            broadcast_superpixel_features(np.zeros((1, 2), np.float32), sp)


class TestBundleIO:
    def test_save_load_roundtrip(self, toy_weights, tmp_path):
        vit_local.save_weight_bundle(tmp_path / "bundle", toy_weights)
        back = vit_local.load_weight_bundle(tmp_path / "bundle")
        assert back.config == toy_weights.config
        assert np.array_equal(back.patch_embed, toy_weights.patch_embed)
        assert np.array_equal(back.pos_embed, toy_weights.pos_embed)
        for a, b in zip(back.layers, toy_weights.layers):
            assert np.array_equal(a.qkv_w, b.qkv_w)
            assert np.array_equal(a.mlp_out_b, b.mlp_out_b)
        assert np.array_equal(back.ln_pre_scale, toy_weights.ln_pre_scale)

    def test_forward_identical_after_roundtrip(self, toy_cfg, toy_weights, tmp_path, rng):
        vit_local.save_weight_bundle(tmp_path / "b", toy_weights)
        back = vit_local.load_weight_bundle(tmp_path / "b")
        img = rng.random((16, 16, 3), dtype=np.float32)
        asn = full_assignment(toy_cfg, [np.array([0, 1])])
        la, ga = forward_tokens(img, toy_weights, asn, 1)
        lb, gb = forward_tokens(img, back, asn, 1)
        assert np.array_equal(la, lb) and np.array_equal(ga, gb)

    def test_missing_tensor_rejected(self, toy_weights, tmp_path):
        from scenedistill.errors import DataError

        vit_local.save_weight_bundle(tmp_path / "b", toy_weights)
        (tmp_path / "b" / "proj.fot1").unlink()
        with pytest.raises(DataError):
            vit_local.load_weight_bundle(tmp_path / "b")
