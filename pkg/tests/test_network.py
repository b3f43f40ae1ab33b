import numpy as np
import pytest

from gaplab.layers import BatchNorm2d, Conv2d, GlobalAvgPool
from gaplab.network import (
    HyperConfig,
    InvalidArchitectureError,
    Network,
    UnsupportedTopologyError,
    build_nin,
    fuse_batchnorm,
    fusion_max_error,
    param_scatter,
    param_vecc,
)
from gaplab.rng import make_rng
from gaplab.train import backward_mean_ce

from conftest import tiny_config


class TestBuildNin:
    def test_block_structure(self):
        # 2 blocks contribute 6 convs, plus the classifier conv
        net, _ = build_nin(tiny_config(depth=2, width=192), (3, 32, 32), 10, make_rng(1, 0))
        convs = net.conv_layers()
        assert len(convs) == 7
        specs = net.conv_specs
        assert (specs[0].k, specs[0].stride, specs[0].padding) == (3, 2, 1)
        assert (specs[1].k, specs[1].stride) == (1, 1)
        assert (specs[2].k, specs[2].stride) == (1, 1)
        assert specs[0].c_out == specs[1].c_out == 192
        assert specs[-1].c_out == 10 and specs[-1].k == 1
        assert isinstance(net.layers[-1], GlobalAvgPool)

    def test_same_seed_bit_identical(self):
        a, _ = build_nin(tiny_config(), (3, 16, 16), 10, make_rng(9, 0))
        b, _ = build_nin(tiny_config(), (3, 16, 16), 10, make_rng(9, 0))
        for (l1, n1), (l2, n2) in zip(a.trainable(), b.trainable()):
            assert l1.params[n1].tobytes() == l2.params[n2].tobytes()

    def test_conv_parameter_count(self):
        # a single 3x3 conv, 3 in, 16 out, with bias: 9*3*16 + 16
        net, _ = build_nin(tiny_config(depth=1, width=16), (3, 16, 16), 10, make_rng(2, 0))
        first = net.conv_layers()[0]
        assert first.params["weight"].size + first.params["bias"].size == 448

    def test_deeper_means_more_parameters(self):
        sizes = []
        for depth in (2, 4, 8):
            net, _ = build_nin(tiny_config(depth=depth), (3, 16, 16), 10, make_rng(3, 0))
            sizes.append(net.num_params())
        assert sizes[0] < sizes[1] < sizes[2]

    def test_spatial_floor_is_one(self):
        # padding keeps the 3x3 stride-2 block alive at 1x1 feature maps
        net, _ = build_nin(tiny_config(depth=8), (3, 16, 16), 10, make_rng(4, 0))
        assert net.conv_specs[-1].n_in == 1

    def test_degenerate_input_raises(self):
        with pytest.raises(InvalidArchitectureError):
            build_nin(tiny_config(depth=2), (3, 0, 0), 10, make_rng(4, 0))

    def test_architecture_pure_function_of_config(self):
        net, _ = build_nin(tiny_config(depth=3, width=12), (3, 16, 16), 10, make_rng(5, 0))
        spatial = [s.n_in for s in net.conv_specs]
        assert spatial == [16, 8, 8, 8, 4, 4, 4, 2, 2, 2]


class TestVecc:
    def test_round_trip(self, small_net):
        net, _ = small_net
        vec = param_vecc(net)
        clone, _ = build_nin(tiny_config(width=6), (3, 8, 8), 4, make_rng(99, 0))
        param_scatter(clone, vec)
        for (l1, n1), (l2, n2) in zip(net.trainable(), clone.trainable()):
            assert l1.params[n1].tobytes() == l2.params[n2].tobytes()

    def test_dimension_is_total_parameter_count(self, small_net):
        net, _ = small_net
        assert param_vecc(net).size == net.num_params()

    def test_norm_equals_sum_of_layer_norms(self, small_net):
        net, _ = small_net
        total = float(param_vecc(net) @ param_vecc(net))
        by_layer = sum(
            float((net.params_of(l, n).astype(np.float64) ** 2).sum()) for l, n in net.trainable()
        )
        assert total == pytest.approx(by_layer, rel=1e-6)

    def test_wrong_length_rejected(self, small_net):
        net, _ = small_net
        with pytest.raises(ValueError):
            param_scatter(net, np.zeros(3))


class TestFusion:
    def _trained_stats_net(self, seed=31):
        net, _ = build_nin(tiny_config(width=6, dropout=0.25), (3, 8, 8), 4, make_rng(seed, 0))
        net.set_dropout_rng(make_rng(seed, 1))
        rng = make_rng(seed, 2)
        for _ in range(3):  # populate running statistics
            x = rng.standard_normal((16, 3, 8, 8)).astype(np.float32)
            backward_mean_ce(net, x, rng.integers(0, 4, 16), train=True)
        return net

    def test_identity_state_keeps_weights(self):
        net, _ = build_nin(tiny_config(width=6), (3, 8, 8), 4, make_rng(30, 0))
        fused = fuse_batchnorm(net)
        for conv_f, conv_o in zip(fused.conv_layers(), net.conv_layers()):
            # only the 1/sqrt(1 + eps) correction separates them
            np.testing.assert_allclose(conv_f.params["weight"], conv_o.params["weight"], rtol=2e-5)

    def test_logit_equivalence(self):
        net = self._trained_stats_net()
        assert fusion_max_error(net, make_rng(32, 0), trials=100) <= 1e-5

    def test_float32_fused_logits_track_the_algebra(self):
        # the stored float32 fusion inherits only representation rounding
        net = self._trained_stats_net()
        fused = fuse_batchnorm(net)
        x = make_rng(35, 0).standard_normal((50, *net.input_shape)).astype(np.float32)
        la = net.astype(np.float64).forward(x.astype(np.float64), train=False)
        lb = fused.forward(x, train=False)
        scale = np.abs(la).max()
        assert np.abs(la - lb).max() <= 1e-5 * max(1.0, scale)

    def test_fused_has_no_batchnorm(self):
        fused = fuse_batchnorm(self._trained_stats_net())
        assert not any(isinstance(l, BatchNorm2d) for l in fused.layers)

    def test_gamma_scales_channel(self):
        net, _ = build_nin(tiny_config(width=6), (3, 8, 8), 4, make_rng(33, 0))
        bn = next(l for l in net.layers if isinstance(l, BatchNorm2d))
        bn.params["gamma"][2] = 2.0
        fused = fuse_batchnorm(net)
        w_f = fused.conv_layers()[0].params["weight"]
        w_o = net.conv_layers()[0].params["weight"]
        np.testing.assert_allclose(w_f[2], 2.0 * w_o[2] / np.sqrt(1 + 1e-5), rtol=1e-6)
        np.testing.assert_allclose(w_f[1], w_o[1] / np.sqrt(1 + 1e-5), rtol=1e-6)

    def test_original_untouched(self):
        net = self._trained_stats_net(seed=34)
        before = param_vecc(net).tobytes()
        fuse_batchnorm(net)
        assert param_vecc(net).tobytes() == before

    def test_bn_without_conv_rejected(self):
        net = Network([BatchNorm2d(3), GlobalAvgPool()], (3, 4, 4), 3)
        with pytest.raises(UnsupportedTopologyError):
            fuse_batchnorm(net)


class TestHyperConfig:
    def test_round_trip(self):
        cfg = tiny_config(optimizer="adam", dropout=0.25)
        assert HyperConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_optimizer(self):
        with pytest.raises(ValueError):
            tiny_config(optimizer="sgdw")
