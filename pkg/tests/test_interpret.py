import numpy as np
import pytest

from conftest import he_scaled_net, top_rows_blind_net
from vialnet.errors import ShapeError
from vialnet.interpret import (AttributionMap, completeness_residual, integrated_gradients, render_heatmap, saliency,
                               target_logit)
from vialnet.model import ModelConfig, Network, build_convnet3_4


def rel_completeness(net, x, steps, target=0):
    ig = integrated_gradients(net, x, target, steps=steps)
    attributed, diff = completeness_residual(net, x, ig)
    return abs(attributed - diff) / abs(diff)


class TestSaliency:
    def test_zero_first_conv_gives_zero_map(self):
        net = he_scaled_net(2, 16, 0)
        net.conv_layers[0].weight[...] = 0
        sal = saliency(net, np.random.default_rng(0).uniform(size=(16, 16, 3)), 0)
        assert np.all(sal.values == 0)

    def test_nonnegative_and_shape(self):
        net = he_scaled_net(4, 16, 1)
        sal = saliency(net, np.random.default_rng(1).uniform(size=(16, 16, 3)), 3)
        assert sal.values.shape == (16, 16) and sal.raw.shape == (16, 16, 3)
        assert np.all(sal.values >= 0)
        np.testing.assert_array_equal(sal.values, np.abs(sal.raw).max(axis=2))

    def test_matches_perturbation_oracle(self):
        net = he_scaled_net(2, 16, 2)
        rng = np.random.default_rng(2)
        x = rng.uniform(size=(16, 16, 3))
        sal = saliency(net, x, 1)
        pixels = [tuple(p) for p in rng.integers(0, 16, size=(10, 2))]
        fd = []
        for i, j in pixels:
            grads = []
            for c in range(3):
                xp, xm = x.copy(), x.copy()
                xp[i, j, c] += 1e-6
                xm[i, j, c] -= 1e-6
                grads.append((target_logit(net, xp, 1) - target_logit(net, xm, 1)) / 2e-6)
            fd.append(max(abs(g) for g in grads))
        analytic = [sal.values[p] for p in pixels]
        np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-9)
        assert np.array_equal(np.argsort(analytic, kind="stable"), np.argsort(fd, kind="stable"))

    def test_blind_region_exactly_zero(self):
        net = top_rows_blind_net()
        sal = saliency(net, np.random.default_rng(3).uniform(size=(16, 16, 3)), 0)
        assert np.all(sal.values[:6] == 0)
        assert np.any(sal.values[6:] > 0)

    def test_deterministic(self):
        net = he_scaled_net(2, 16, 4)
        x = np.random.default_rng(4).uniform(size=(16, 16, 3))
        assert saliency(net, x, 0).raw.tobytes() == saliency(net, x, 0).raw.tobytes()

    def test_bad_target(self):
        with pytest.raises(ShapeError):
            saliency(he_scaled_net(2, 16, 0), np.zeros((16, 16, 3)), 2)


class TestIntegratedGradients:
    def test_zero_path(self):
        net = he_scaled_net(2, 16, 5)
        x = np.random.default_rng(5).uniform(size=(16, 16, 3))
        ig = integrated_gradients(net, x, 0, baseline=x.copy(), steps=20)
        assert np.all(ig.raw == 0)

    def test_linear_model_exact(self):
        cfg = ModelConfig(6, 5, (), (6 * 5 * 3, 2), 2)
        net = Network(cfg, dtype=np.float64)
        net.init_uniform(0)
        rng = np.random.default_rng(6)
        x, base = rng.uniform(size=(6, 5, 3)), rng.uniform(size=(6, 5, 3))
        expected = net.dense_layers[0].weight[1].reshape(6, 5, 3) * (x - base)
        for steps in (1, 7, 50):
            ig = integrated_gradients(net, x, 1, baseline=base, steps=steps)
            np.testing.assert_allclose(ig.raw, expected, rtol=1e-12, atol=1e-15)

    def test_bias_free_net_exact_from_black(self):
        # without biases the logit is positively homogeneous, so the path gradient is constant
        net = he_scaled_net(2, 16, 7)
        for layer in net.layers:
            layer.bias[...] = 0
        x = np.random.default_rng(7).uniform(size=(16, 16, 3))
        for steps in (1, 50):
            assert rel_completeness(net, x, steps) < 1e-9

    def test_completeness_typical_random_nets(self):
        # the right Riemann sum has O(1/steps) error at ReLU kinks; typical nets meet 5% / 1%
        e50, e200 = [], []
        for seed in range(30):
            net = he_scaled_net(2, 16, seed)
            x = np.random.default_rng(100 + seed).uniform(size=(16, 16, 3))
            e50.append(rel_completeness(net, x, 50))
            e200.append(rel_completeness(net, x, 200))
        assert np.median(e50) < 0.05
        assert np.median(e200) < 0.01

    def test_completeness_converges(self):
        net = he_scaled_net(2, 16, 3)
        x = np.random.default_rng(103).uniform(size=(16, 16, 3))
        errors = [rel_completeness(net, x, m) for m in (50, 400, 3200)]
        assert errors[-1] < 1e-2
        assert errors[-1] < errors[0] / 5

    def test_channel_sum(self):
        net = he_scaled_net(2, 16, 8)
        ig = integrated_gradients(net, np.random.default_rng(8).uniform(size=(16, 16, 3)), 1, steps=10)
        np.testing.assert_allclose(ig.values, ig.raw.sum(axis=2))

    def test_batching_invariant(self):
        net = he_scaled_net(2, 16, 9)
        x = np.random.default_rng(9).uniform(size=(16, 16, 3))
        a = integrated_gradients(net, x, 0, steps=20, batch_size=3)
        b = integrated_gradients(net, x, 0, steps=20, batch_size=20)
        np.testing.assert_allclose(a.raw, b.raw, rtol=1e-12, atol=1e-15)

    def test_errors(self):
        net = build_convnet3_4(2, 16)
        with pytest.raises(ShapeError):
            integrated_gradients(net, np.zeros((16, 16, 3)), 0, baseline=np.zeros((8, 8, 3)))
        with pytest.raises(ShapeError):
            integrated_gradients(net, np.zeros((16, 16, 3)), 0, steps=0)
        with pytest.raises(ShapeError):
            integrated_gradients(net, np.zeros((15, 16, 3)), 0)


def amap(values, method):
    values = np.asarray(values, dtype=float)
    return AttributionMap(np.repeat(values[..., None], 3, axis=2), values, 0, method)


class TestHeatmap:
    def test_zero_saliency_white(self):
        img = render_heatmap(amap(np.zeros((4, 4)), "saliency"))
        assert np.all(img == 255)

    def test_zero_ig_white(self):
        assert np.all(render_heatmap(amap(np.zeros((3, 3)), "ig")) == 255)

    def test_endpoints(self):
        sal = render_heatmap(amap([[0.0, 0.5, 2.0]], "saliency"))
        assert sal[0, 2].tolist() == [0, 0, 255]
        assert sal[0, 0].tolist() == [255, 255, 255]
        ig = render_heatmap(amap([[-1.0, 0.0, 3.0]], "ig"))
        assert ig[0, 2].tolist() == [0, 255, 0]
        assert ig[0, 1].tolist() == [255, 255, 255]
        assert ig[0, 0].tolist() == [255, 170, 170]

    def test_negative_extreme_red(self):
        ig = render_heatmap(amap([[-2.0, 1.0]], "ig"))
        assert ig[0, 0].tolist() == [255, 0, 0]

    @pytest.mark.parametrize("method", ["saliency", "ig"])
    def test_scale_invariant(self, method):
        v = np.random.default_rng(0).uniform(-1, 1, (5, 5))
        if method == "saliency":
            v = np.abs(v)
        a = render_heatmap(amap(v, method))
        b = render_heatmap(amap(v * 37.5, method))
        np.testing.assert_array_equal(a, b)

    def test_non_finite_rejected(self):
        with pytest.raises(ShapeError):
            render_heatmap(amap([[np.nan]], "ig"))
