"""Layer blocks: encoding invariances, pooling symmetry, attention algebra."""

import math

import numpy as np
import pytest

from ibt import autodiff as ad
from ibt.autodiff import Tensor
from ibt.errors import ConfigError
from ibt.geometry import PointCloud, knn_graph
from ibt.layers import (AblationSwitches, AttentiveFeaturePooling, IbtLayer,
                        LocalityAwareTransformer, RelativePositionEncoding,
                        _batched_neighbor_geometry, gather_neighbors)


def make_scene(n=16, d=8, k=4, seed=0):
    rng = np.random.default_rng(seed)
    coords = rng.standard_normal((1, n, 3))
    graphs = knn_graph(PointCloud(coords[0]), k).indices[None]
    features = Tensor(rng.standard_normal((1, n, d)))
    return coords, graphs, features


def quantize(x):
    # multiples of 2^-16 keep additions exact, so translation is bitwise-safe
    return np.round(np.asarray(x) * 2 ** 16) / 2 ** 16


class TestRelativePositionEncoding:
    def test_edge_input_width_is_3_plus_1_plus_d(self):
        rpe = RelativePositionEncoding(128, 128, np.random.default_rng(0))
        assert rpe.pos_mlp.linears[0].weight.shape == (132, 128)

    def test_self_loop_edge_components_are_zero(self):
        coords, graphs, features = make_scene()
        deltas, dists = _batched_neighbor_geometry(coords, graphs)
        neigh = gather_neighbors(features, graphs)
        diff = features.data[:, :, None, :] - neigh.data
        assert np.array_equal(deltas[:, :, 0], np.zeros_like(deltas[:, :, 0]))
        assert np.array_equal(dists[:, :, 0], np.zeros_like(dists[:, :, 0]))
        assert np.array_equal(diff[:, :, 0], np.zeros_like(diff[:, :, 0]))

    def test_translation_invariance_bitwise(self):
        rng = np.random.default_rng(1)
        coords = quantize(rng.standard_normal((1, 20, 3)))
        graphs = knn_graph(PointCloud(coords[0]), 5).indices[None]
        features = Tensor(rng.standard_normal((1, 20, 8)))
        rpe = RelativePositionEncoding(8, 8, np.random.default_rng(2))
        rpe.eval()
        base = rpe(features, coords, graphs).data
        for i in range(5):
            t = quantize(rng.uniform(-4, 4, 3))
            shifted = rpe(features, coords + t, graphs).data
            assert np.array_equal(base, shifted)

    def test_output_shape(self):
        coords, graphs, features = make_scene(n=10, d=8, k=4)
        rpe = RelativePositionEncoding(8, 12, np.random.default_rng(3))
        assert rpe(features, coords, graphs).shape == (1, 10, 4, 12)


class TestAttentiveFeaturePooling:
    def test_rejects_no_branches(self):
        with pytest.raises(ConfigError):
            AttentiveFeaturePooling(8, 8, np.random.default_rng(0),
                                    use_max=False, use_attention=False)

    def test_k1_attention_equals_max_branch(self):
        # with one neighbor, softmax weight is 1 and both branches see h[:, :, 0]
        rng = np.random.default_rng(4)
        h = Tensor(rng.standard_normal((1, 6, 1, 8)))
        afp_max = AttentiveFeaturePooling(8, 8, np.random.default_rng(5),
                                          use_max=True, use_attention=False)
        afp_att = AttentiveFeaturePooling(8, 8, np.random.default_rng(6),
                                          use_max=False, use_attention=True)
        # same output head so the branch values are directly comparable
        afp_att.out_mlp = afp_max.out_mlp
        afp_max.eval()
        afp_att.eval()
        assert np.allclose(afp_max(h).data, afp_att(h).data, atol=1e-12)

    def test_scores_sum_to_one_per_channel(self):
        rng = np.random.default_rng(7)
        afp = AttentiveFeaturePooling(8, 8, np.random.default_rng(8))
        h = Tensor(rng.standard_normal((2, 5, 6, 8)))
        scores = ad.softmax(afp.score(h), axis=2)
        assert np.abs(scores.data.sum(axis=2) - 1.0).max() <= 1e-12

    def test_neighbor_shuffle_invariance(self):
        rng = np.random.default_rng(9)
        afp = AttentiveFeaturePooling(8, 8, np.random.default_rng(10))
        afp.eval()
        h = rng.standard_normal((1, 12, 6, 8))
        base = afp(Tensor(h)).data
        for _ in range(10):
            shuffled = np.stack([
                np.stack([row[rng.permutation(6)] for row in batch])
                for batch in h])
            assert np.abs(afp(Tensor(shuffled)).data - base).max() <= 1e-12


class TestLocalityAwareTransformer:
    def test_qk_width_is_quarter(self):
        lat = LocalityAwareTransformer(128, np.random.default_rng(0))
        assert lat.wq.weight.shape == (128, 32)

    def test_width_not_divisible_by_4_rejected(self):
        with pytest.raises(ConfigError):
            LocalityAwareTransformer(10, np.random.default_rng(0))

    def test_attention_rows_sum_to_one(self):
        coords, _, features = make_scene(n=14, d=8)
        rng = np.random.default_rng(11)
        lat = LocalityAwareTransformer(8, np.random.default_rng(12))
        lat.eval()
        f_hat = Tensor(rng.standard_normal((1, 14, 8)))
        _, internals = lat(features, coords, f_hat, return_internals=True)
        rows = internals["attention"].data.sum(axis=-1)
        assert np.abs(rows - 1.0).max() <= 1e-12

    def test_gate_strictly_inside_unit_interval(self):
        coords, _, features = make_scene(n=14, d=8)
        rng = np.random.default_rng(13)
        lat = LocalityAwareTransformer(8, np.random.default_rng(14))
        lat.eval()
        f_hat = Tensor(rng.standard_normal((1, 14, 8)) * 10)
        _, internals = lat(features, coords, f_hat, return_internals=True)
        gate = internals["gate"].data
        assert (gate > 0.0).all() and (gate < 1.0).all()

    def test_residual_algebra(self):
        # out - f_in must equal the MBR block applied to (f_in - f_sa)
        coords, _, features = make_scene(n=14, d=8, seed=20)
        rng = np.random.default_rng(15)
        lat = LocalityAwareTransformer(8, np.random.default_rng(16))
        lat.eval()
        f_hat = Tensor(rng.standard_normal((1, 14, 8)))
        out, internals = lat(features, coords, f_hat, return_internals=True)
        mbr = ad.relu(lat.mbr_norm(lat.mbr_linear(
            ad.sub(internals["f_in"], internals["f_sa"]))))
        assert np.abs((out.data - internals["f_in"].data) - mbr.data).max() <= 1e-12

    def test_gate_ablated_ignores_local_features(self):
        coords, _, features = make_scene(n=14, d=8)
        rng = np.random.default_rng(17)
        lat = LocalityAwareTransformer(8, np.random.default_rng(18), use_gate=False)
        lat.eval()
        out1 = lat(features, coords, Tensor(rng.standard_normal((1, 14, 8)))).data
        out2 = lat(features, coords, Tensor(rng.standard_normal((1, 14, 8)))).data
        out3 = lat(features, coords, None).data
        assert np.array_equal(out1, out2)
        assert np.array_equal(out1, out3)

    def test_delta_ablated_is_translation_invariant(self):
        rng = np.random.default_rng(19)
        coords = quantize(rng.standard_normal((1, 12, 3)))
        features = Tensor(rng.standard_normal((1, 12, 8)))
        f_hat = Tensor(rng.standard_normal((1, 12, 8)))
        lat = LocalityAwareTransformer(8, np.random.default_rng(20), use_delta=False)
        lat.eval()
        base = lat(features, coords, f_hat).data
        shifted = lat(features, coords + quantize([3.0, -2.0, 0.5]), f_hat).data
        assert np.array_equal(base, shifted)

    def test_delta_enabled_breaks_translation_invariance(self):
        rng = np.random.default_rng(21)
        coords = quantize(rng.standard_normal((1, 12, 3)))
        features = Tensor(rng.standard_normal((1, 12, 8)))
        f_hat = Tensor(rng.standard_normal((1, 12, 8)))
        lat = LocalityAwareTransformer(8, np.random.default_rng(22))
        lat.eval()
        base = lat(features, coords, f_hat).data
        shifted = lat(features, coords + quantize([3.0, -2.0, 0.5]), f_hat).data
        assert not np.allclose(base, shifted)

    def test_feed_forward_stream(self):
        coords, _, features = make_scene(n=12, d=8)
        rng = np.random.default_rng(23)
        f_hat = Tensor(rng.standard_normal((1, 12, 8)))
        lat = LocalityAwareTransformer(8, np.random.default_rng(24),
                                       locality_stream="feed_forward")
        lat.eval()
        _, internals = lat(features, coords, f_hat, return_internals=True)
        delta = lat.delta_mlp(Tensor(coords))
        assert np.allclose(internals["f_in"].data, f_hat.data + delta.data)


class TestAblationSwitches:
    def test_both_pooling_branches_off_rejected(self):
        with pytest.raises(ConfigError):
            AblationSwitches(use_max_pool=False, use_attention_pool=False).validate()

    def test_pooling_and_transformer_both_off_rejected(self):
        with pytest.raises(ConfigError):
            AblationSwitches(use_pooling=False, use_transformer=False,
                             use_channel_gate_w=False,
                             use_position_encoding=False).validate()

    def test_gate_without_pooling_rejected(self):
        with pytest.raises(ConfigError):
            AblationSwitches(use_pooling=False, use_position_encoding=False).validate()


class TestIbtLayer:
    def test_output_width_matches_input(self):
        coords, graphs, features = make_scene(n=16, d=8, k=4)
        layer = IbtLayer(8, 8, AblationSwitches(), np.random.default_rng(0))
        layer.eval()
        assert layer(features, coords, graphs).shape == (1, 16, 8)

    def test_permutation_equivariance_eval_mode(self):
        rng = np.random.default_rng(25)
        coords, graphs, features = make_scene(n=20, d=8, k=5, seed=26)
        layer = IbtLayer(8, 8, AblationSwitches(), np.random.default_rng(27))
        layer.eval()
        base = layer(features, coords, graphs).data
        perm = rng.permutation(20)
        pcoords = coords[:, perm]
        pgraphs = knn_graph(PointCloud(pcoords[0]), 5).indices[None]
        pfeat = Tensor(features.data[:, perm])
        permuted = layer(pfeat, pcoords, pgraphs).data
        assert np.abs(permuted - base[:, perm]).max() <= 1e-9

    def test_transformer_ablated_returns_pooled_feature(self):
        coords, graphs, features = make_scene(n=16, d=8, k=4)
        switches = AblationSwitches(use_transformer=False)
        layer = IbtLayer(8, 8, switches, np.random.default_rng(1))
        layer.eval()
        out = layer(features, coords, graphs)
        expected = layer.afp(layer.rpe(features, coords, graphs))
        assert np.array_equal(out.data, expected.data)

    def test_gate_off_drops_local_branch_parameters(self):
        full = IbtLayer(8, 8, AblationSwitches(), np.random.default_rng(2))
        gated_off = IbtLayer(8, 8, AblationSwitches(use_channel_gate_w=False),
                             np.random.default_rng(2))
        assert not gated_off.has_local_branch
        assert gated_off.num_parameters() < full.num_parameters()

    def test_position_encoding_off_uses_plain_mlp(self):
        layer = IbtLayer(8, 8, AblationSwitches(use_position_encoding=False),
                         np.random.default_rng(3))
        assert hasattr(layer, "neighbor_mlp") and not hasattr(layer, "rpe")

    def test_gradients_match_finite_differences(self):
        from ibt.gradcheck import check_layers
        reports = check_layers()
        for name, report in reports.items():
            assert report.passed, f"{name}:\n{report.format_table()}"
