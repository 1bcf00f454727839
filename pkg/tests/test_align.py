from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from components.align import (
    AlignParams,
    CameraFeatureSet,
    DropoutMask,
    align_grad_check,
    align_gradients,
    align_with_weights,
    attention_weights,
    gather_camera_features,
    grad_check_report,
    learnable_align,
    mean_pool_align,
)
from components.augment import apply_pipeline
from components.geometry import FeatureMap
from models.augment import AugConfig, AugRecord


def oracle(l, c, p: AlignParams, uniform: bool = False):
    """Dense-matrix evaluation written out term by term."""
    n = c.shape[0]
    q = [sum(p.w_q[e, d] * l[d] for d in range(len(l))) + p.b_q[e] for e in range(p.embed_dim)]
    k = [[sum(p.w_k[e, d] * c[i, d] for d in range(c.shape[1])) + p.b_k[e] for e in range(p.embed_dim)]
         for i in range(n)]
    v = [[sum(p.w_v[e, d] * c[i, d] for d in range(c.shape[1])) + p.b_v[e] for e in range(p.embed_dim)]
         for i in range(n)]
    scale = 1 / math.sqrt(p.embed_dim) if p.scale_affinity else 1.0
    a = [sum(q[e] * k[i][e] for e in range(p.embed_dim)) * scale for i in range(n)]
    if uniform:
        w = [1.0 / n] * n
    else:
        top = max(a)
        e_a = [math.exp(x - top) for x in a]
        w = [x / sum(e_a) for x in e_a]
    o = [sum(w[i] * v[i][e] for i in range(n)) for e in range(p.embed_dim)]
    m = [sum(p.w_mlp[j, e] * o[e] for e in range(p.embed_dim)) + p.b_mlp[j] for j in range(p.mlp_dim)]
    z = list(l) + m
    out = [sum(p.w_squeeze[r, j] * z[j] for j in range(len(z))) + p.b_squeeze[r] for r in range(len(l))]
    return np.array(out), np.array(w), np.array(m)


def random_instance(seed: int, d_lidar=None, d_camera=None, n=None, **kwargs):
    rng = np.random.default_rng(seed)
    d_lidar = d_lidar or int(rng.integers(1, 9))
    d_camera = d_camera or int(rng.integers(1, 9))
    n = n or int(rng.integers(1, 9))
    params = AlignParams.init(d_lidar, d_camera, embed_dim=6, mlp_dim=5, seed=seed, bias_scale=0.2, **kwargs)
    lidar = rng.normal(size=d_lidar)
    cams = CameraFeatureSet(rng.normal(size=(n, d_camera)), rng.uniform(0, 50, size=(n, 2)), np.arange(n))
    return params, lidar, cams


@pytest.mark.unit
class TestLearnableAlign:
    def test_matches_oracle_on_random_instances(self):
        for seed in range(100):
            params, lidar, cams = random_instance(seed, scale_affinity=seed % 2 == 0)
            expected, _, _ = oracle(lidar, cams.features, params)

            assert_allclose(learnable_align(lidar, cams, params), expected, rtol=1e-6, atol=1e-12)

    def test_weights_are_a_distribution(self):
        for seed in range(100):
            params, lidar, cams = random_instance(seed)
            w = attention_weights(lidar, cams, params)

            assert (w >= 0).all()
            assert abs(w.sum() - 1) <= 1e-9

    def test_aggregate_stays_in_convex_hull_of_values(self):
        for seed in range(100):
            params, lidar, cams = random_instance(seed)
            w = attention_weights(lidar, cams, params)
            values = cams.features @ params.w_v.T + params.b_v
            aggregate = w @ values

            assert (aggregate >= values.min(axis=0) - 1e-12).all()
            assert (aggregate <= values.max(axis=0) + 1e-12).all()

    def test_permuting_camera_features_permutes_weights_only(self):
        for seed in range(100):
            params, lidar, cams = random_instance(seed)
            perm = np.random.default_rng(seed).permutation(len(cams))
            shuffled = CameraFeatureSet(cams.features[perm], cams.pixels[perm], perm)

            out, w = align_with_weights(lidar, cams, params)
            out_shuffled, w_shuffled = align_with_weights(lidar, shuffled, params)

            assert_allclose(out_shuffled, out, rtol=1e-10, atol=1e-12)
            assert_allclose(w_shuffled, w[perm], rtol=1e-10, atol=1e-15)

    def test_common_affinity_shift_leaves_weights_unchanged(self):
        for seed in range(100):
            params, lidar, cams = random_instance(seed, scale_affinity=seed % 2 == 1)
            query = params.w_q @ lidar + params.b_q
            # Moving every key by delta adds query . delta to every affinity
            delta = np.random.default_rng(seed).normal(size=params.embed_dim) * 3
            shifted = params.replace(b_k=params.b_k + delta)

            assert abs(query @ delta) > 0
            assert_allclose(attention_weights(lidar, cams, shifted), attention_weights(lidar, cams, params),
                            rtol=0, atol=1e-9)

    def test_single_feature_has_unit_weight(self):
        params, lidar, cams = random_instance(3, n=1)
        c = cams.features[0]
        m = params.w_mlp @ (params.w_v @ c + params.b_v) + params.b_mlp
        expected = params.w_squeeze @ np.concatenate([lidar, m]) + params.b_squeeze

        assert_array_equal(attention_weights(lidar, cams, params), [1.0])
        assert_allclose(learnable_align(lidar, cams, params), expected, rtol=1e-12, atol=1e-12)

    def test_identical_features_share_weight_equally(self):
        params, lidar, cams = random_instance(4, n=1)
        triple = CameraFeatureSet(np.repeat(cams.features, 3, axis=0), np.zeros((3, 2)))

        assert_allclose(attention_weights(lidar, triple, params), [1 / 3] * 3, rtol=1e-12, atol=1e-12)
        assert_allclose(learnable_align(lidar, triple, params), learnable_align(lidar, cams, params), rtol=1e-12, atol=1e-12)

    def test_no_camera_features_squeezes_lidar_alone(self):
        params, lidar, _ = random_instance(5)
        out = learnable_align(lidar, CameraFeatureSet.empty(params.d_camera), params)
        expected = params.w_squeeze[:, :params.d_lidar] @ lidar + params.b_squeeze

        assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch_raises(self):
        params, lidar, cams = random_instance(6, d_lidar=4, d_camera=3)

        with pytest.raises(ValueError, match="lidar feature"):
            learnable_align(np.zeros(5), cams, params)
        with pytest.raises(ValueError, match="channels"):
            learnable_align(lidar, CameraFeatureSet(np.zeros((2, 4)), np.zeros((2, 2))), params)


@pytest.mark.unit
class TestDropout:
    def test_post_softmax_mask_rescales_survivors(self):
        params, lidar, cams = random_instance(7, n=6)
        mask = DropoutMask(keep=np.array([True, False, True, True, False, True]), rate=0.3)

        clean = attention_weights(lidar, cams, params)
        dropped = attention_weights(lidar, cams, params, mask)

        assert_allclose(dropped, clean * mask.keep / 0.7, rtol=1e-12, atol=1e-12)

    def test_pre_softmax_mask_renormalises_survivors(self):
        params, lidar, cams = random_instance(8, n=6, dropout_position="pre_softmax")
        mask = DropoutMask(keep=np.array([True, False, True, True, False, True]), rate=0.3)

        w = attention_weights(lidar, cams, params, mask)

        assert_array_equal(w[~mask.keep], 0)
        assert abs(w.sum() - 1) <= 1e-12

    def test_mask_length_must_match(self):
        params, lidar, cams = random_instance(9, n=3)

        with pytest.raises(ValueError, match="dropout mask"):
            learnable_align(lidar, cams, params, DropoutMask(keep=np.ones(4, dtype=bool), rate=0.3))

    def test_sampled_mask_keeps_expected_fraction(self):
        mask = DropoutMask.sample(100_000, 0.3, np.random.default_rng(0))

        assert abs(mask.keep.mean() - 0.7) < 0.01


@pytest.mark.unit
class TestMeanPoolAlign:
    def test_identical_features_match_learnable_align(self):
        params, lidar, cams = random_instance(10, n=1)
        many = CameraFeatureSet(np.repeat(cams.features, 5, axis=0), np.zeros((5, 2)))

        assert_allclose(mean_pool_align(lidar, many, params), learnable_align(lidar, many, params), rtol=1e-12, atol=1e-12)

    def test_single_feature_matches_learnable_align(self):
        params, lidar, cams = random_instance(11, n=1)

        assert_allclose(mean_pool_align(lidar, cams, params), learnable_align(lidar, cams, params), rtol=1e-12, atol=1e-12)

    def test_matches_uniform_oracle(self):
        for seed in range(20):
            params, lidar, cams = random_instance(seed)
            expected, _, _ = oracle(lidar, cams.features, params, uniform=True)

            assert_allclose(mean_pool_align(lidar, cams, params), expected, rtol=1e-6, atol=1e-12)


@pytest.mark.unit
class TestGradients:
    def test_random_instance_passes(self):
        params, lidar, cams = random_instance(12, d_lidar=4, d_camera=3, n=5)

        assert align_grad_check(params, lidar, cams, eps=1e-5) < 1e-4

    def test_squeeze_gradient_is_outer_product(self):
        params, lidar, cams = random_instance(13)
        _, _, m = oracle(lidar, cams.features, params)

        grads = align_gradients(params, lidar, cams)

        assert_allclose(grads["w_squeeze"], np.outer(np.ones(params.d_lidar), np.concatenate([lidar, m])),
                        rtol=1e-10)
        assert_array_equal(grads["b_squeeze"], np.ones(params.d_lidar))

    def test_zero_query_makes_key_gradient_vanish(self):
        params, lidar, cams = random_instance(14, d_lidar=3, d_camera=2, n=4)
        zeros = {name: np.zeros_like(arr) for name, arr in params.arrays().items() if name.startswith("b_")}
        params = params.replace(w_q=np.zeros_like(params.w_q), **zeros)

        grads = align_gradients(params, lidar, cams)
        report = grad_check_report(params, lidar, cams)

        assert np.abs(grads["w_k"]).max() < 1e-8
        assert report["w_k"] < 1e-8

    def test_report_covers_every_tensor_and_both_inputs(self):
        params, lidar, cams = random_instance(15, n=2)

        report = grad_check_report(params, lidar, cams)

        assert set(report) == {*params.arrays(), "lidar", "camera"}

    def test_eps_outside_range_raises(self):
        params, lidar, cams = random_instance(16)

        with pytest.raises(ValueError, match="eps"):
            align_grad_check(params, lidar, cams, eps=0.1)

    def test_no_camera_features(self):
        params, lidar, _ = random_instance(17)

        assert align_grad_check(params, lidar, CameraFeatureSet.empty(params.d_camera)) < 1e-4

    @pytest.mark.slow
    def test_hundred_seeded_instances(self):
        worst = 0.0
        for seed in range(100):
            params = AlignParams.init(4, 3, embed_dim=8, mlp_dim=6, seed=seed, bias_scale=0.1)
            rng = np.random.default_rng(seed)
            cams = CameraFeatureSet(rng.normal(size=(8, 3)), np.zeros((8, 2)))
            worst = max(worst, align_grad_check(params, rng.normal(size=4), cams, eps=1e-5))

        assert worst < 1e-4


@pytest.mark.unit
class TestAlignParams:
    def test_save_and_load(self, tmp_path):
        params = AlignParams.init(4, 3, embed_dim=6, mlp_dim=5, seed=2, scale_affinity=True)
        params.save(tmp_path / "align.json")
        loaded = AlignParams.load(tmp_path / "align.json")

        assert loaded.scale_affinity
        for name, arr in params.arrays().items():
            assert_array_equal(getattr(loaded, name), arr)

    def test_shape_mismatch_is_rejected(self):
        params = AlignParams.init(4, 3, embed_dim=6, mlp_dim=5)

        with pytest.raises(ValueError, match="w_squeeze"):
            params.replace(w_squeeze=np.zeros((4, 4)))

    def test_default_layer_sizes(self):
        params = AlignParams.init(64, 4)

        assert (params.embed_dim, params.mlp_dim, params.dropout_rate) == (256, 192, 0.3)


@pytest.mark.unit
class TestGatherCameraFeatures:
    def test_point_on_optical_axis(self, pinhole, pinhole_features):
        cams = gather_camera_features(np.array([[0.0, 0.0, 5.0]]), AugRecord(), pinhole, pinhole_features, max_n=4)

        assert len(cams) == 1
        assert_array_equal(cams.pixels, [[50.0, 50.0]])

    def test_points_behind_camera_give_empty_set(self, pinhole, pinhole_features):
        cams = gather_camera_features(np.array([[0.0, 0.0, -5.0]]), AugRecord(), pinhole, pinhole_features, max_n=4)

        assert len(cams) == 0
        assert cams.features.shape == (0, pinhole_features.channels)

    def test_points_sharing_a_cell_are_deduplicated(self, pinhole, pinhole_features):
        keys = np.array([[0.0, 0.0, 5.0], [0.001, 0.0, 5.0], [0.2, 0.0, 1.0]])
        cams = gather_camera_features(keys, AugRecord(), pinhole, pinhole_features, max_n=4)

        assert_array_equal(cams.key_indices, [0, 2])

    def test_subsampling_is_seeded_by_pillar(self, pinhole, pinhole_features):
        grid = np.linspace(-0.4, 0.4, 6)
        keys = np.array([[x, y, 1.0] for x in grid for y in grid])

        first = gather_camera_features(keys, AugRecord(), pinhole, pinhole_features, max_n=5, pillar_index=3)
        again = gather_camera_features(keys, AugRecord(), pinhole, pinhole_features, max_n=5, pillar_index=3)

        assert len(first) == 5
        assert_array_equal(first.key_indices, again.key_indices)

    def test_inverse_aug_recovers_scene_pixels(self, scene):
        truth = scene.ground_truth()
        augmented, record = apply_pipeline(scene.points, AugConfig.rotation_only(math.radians(40)), seed=2)
        sources = augmented.source_index
        visible = ~np.isnan(truth[sources, 0])

        cams = gather_camera_features(augmented.positions[visible], record, scene.camera, scene.features,
                                      max_n=10_000)

        expected = truth[sources[visible][cams.key_indices]]
        assert len(cams) > 0
        assert np.abs(cams.pixels - expected).max() <= 0.5

    def test_max_n_must_be_positive(self, pinhole, pinhole_features):
        with pytest.raises(ValueError, match="max_n"):
            gather_camera_features(np.zeros((1, 3)), AugRecord(), pinhole, pinhole_features, max_n=0)

    def test_camera_features_are_bilinear_samples(self, pinhole):
        fm = FeatureMap(data=np.full((13, 13, 2), 4.0, dtype=np.float32), scale=8.0)
        cams = gather_camera_features(np.array([[0.1, -0.1, 2.0]]), AugRecord(), pinhole, fm, max_n=4)

        assert_allclose(cams.features, [[4.0, 4.0]])
