import math

import numpy as np
import pytest

from assertkit.nn import (Adam, AdamState, GraphError, OptimizerConfig, Parameter, Tensor, adam_step,
                          no_grad, noam_lr)
from assertkit.nn import functional as F
from assertkit.nn.layers import BatchNorm2d

from _gradcases import PRIMITIVES

TRIALS = range(20)


def direct_conv(x, w, b, stride=1, padding=0, dilation=1):
    """Nested-loop reference cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i_n in range(n):
        for i_o in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = b[i_o]
                    for ci in range(c):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += w[i_o, ci, a, bb] * xp[i_n, ci, i * stride + a * dilation, j * stride + bb * dilation]
                    out[i_n, i_o, i, j] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((2, 1, 5, 6))
        out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("seed", TRIALS)
    def test_matches_direct_convolution(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 1, 5, 5))
        w = rng.standard_normal((1, 1, 3, 3))
        b = rng.standard_normal(1)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, direct_conv(x, w, b), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 3, 3), (1, 0, 2)])
    def test_matches_direct_convolution_strided_dilated(self, stride, padding, dilation):
        rng = np.random.default_rng(stride * 10 + dilation)
        x = rng.standard_normal((2, 3, 9, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, dilation)
        np.testing.assert_allclose(out.data, direct_conv(x, w, b, stride, padding, dilation), atol=1e-12)

    def test_dilation_two_hand_sum(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 1, 7, 7))
        w = rng.standard_normal((1, 1, 3, 3))
        out = F.conv2d(Tensor(x), Tensor(w), None, padding=2, dilation=2)
        assert out.shape == (1, 1, 7, 7)
        # output (3, 3) reads input rows/cols 3 + {-2, 0, 2}
        expected = sum(w[0, 0, a, b] * x[0, 0, 1 + 2 * a, 1 + 2 * b] for a in range(3) for b in range(3))
        assert out.data[0, 0, 3, 3] == pytest.approx(expected, abs=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="channel"):
            F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestLayerForward:
    def test_relu(self):
        np.testing.assert_array_equal(F.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_log_softmax_uniform(self):
        np.testing.assert_allclose(F.log_softmax(Tensor([[0.0, 0.0]])).data, [[math.log(0.5)] * 2])

    def test_log_softmax_normalised_and_stable(self):
        x = np.random.default_rng(0).standard_normal((50, 7)) * 300
        out = F.log_softmax(Tensor(x), axis=1).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(np.exp(out).sum(axis=1), 1.0, atol=1e-6)

    def test_batchnorm_training_normalises(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((64, 2, 4, 4))
        z = (z - z.mean(axis=(0, 2, 3), keepdims=True)) / z.std(axis=(0, 2, 3), keepdims=True)
        x = 3.0 + 2.0 * z  # per-channel mean 3, variance 4
        bn = BatchNorm2d(2, eps=1e-12, dtype=np.float64)
        out = bn(Tensor(x)).data
        np.testing.assert_allclose(out, (x - 3.0) / 2.0, atol=1e-9)

    def test_batchnorm_running_stats_used_in_eval(self):
        bn = BatchNorm2d(1, momentum=1.0, dtype=np.float64)
        x = np.arange(8.0).reshape(2, 1, 2, 2)
        bn(Tensor(x))
        np.testing.assert_allclose(bn.running_mean, [3.5])
        np.testing.assert_allclose(bn.running_var, [np.var(x, ddof=1)])
        bn.eval()
        out = bn(Tensor(np.full((1, 1, 1, 1), 3.5))).data
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_maxpool_drops_partial_windows(self):
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        out = F.max_pool2d(Tensor(x), 2).data
        np.testing.assert_array_equal(out[0, 0], [[6, 8], [16, 18]])

    def test_bilinear_resize_constant(self):
        out = F.bilinear_resize(Tensor(np.full((1, 2, 3, 5), 4.0)), (7, 11)).data
        np.testing.assert_allclose(out, 4.0)


class TestCrossEntropy:
    def test_uniform(self):
        assert float(F.cross_entropy(Tensor([[0.0, 0.0]]), [0]).data) == pytest.approx(math.log(2))

    def test_confident(self):
        # -log(1 / (1 + e^-20)) = log1p(e^-20)
        value = float(F.cross_entropy(Tensor([[10.0, -10.0]]), [0]).data)
        assert value == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-6)
        assert value == pytest.approx(2.06e-9, rel=1e-2)

    def test_mean_over_identical_rows(self):
        one = float(F.cross_entropy(Tensor([[0.3, -1.2, 2.0]]), [2]).data)
        two = float(F.cross_entropy(Tensor([[0.3, -1.2, 2.0]] * 2), [2, 2]).data)
        assert two == pytest.approx(one)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            F.cross_entropy(Tensor([[0.0, 0.0]]), [2])


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square(self):
        data = np.random.default_rng(1).standard_normal(5)
        x = Tensor(data, requires_grad=True)
        ((x * x).sum() / 2).backward()
        np.testing.assert_allclose(x.grad, data)

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError, match="scalar"):
            (x * 2).backward()

    def test_detached_rejected(self):
        with pytest.raises(GraphError, match="detached"):
            Tensor(np.ones(3)).sum().backward()

    def test_second_backward_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError, match="already"):
            loss.backward()

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2).sum()
        assert not y.requires_grad


class TestGradients:
    """Central differences (step 1e-4, float64) agree within 1e-4 relative."""

    @pytest.mark.parametrize("seed", TRIALS)
    @pytest.mark.parametrize("case", sorted(PRIMITIVES))
    def test_primitive(self, case, seed):
        assert PRIMITIVES[case](seed) < 1e-4


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        cfg = OptimizerConfig(weight_decay=0.0)
        theta = np.array([1.0, -2.0])
        state = AdamState.zeros_like([theta])
        adam_step([theta], [np.zeros(2)], state, cfg, lr=0.1)
        np.testing.assert_array_equal(theta, [1.0, -2.0])

    def test_first_step(self):
        cfg = OptimizerConfig(weight_decay=0.0)
        theta = np.array([0.0])
        state = AdamState.zeros_like([theta])
        adam_step([theta], [np.array([1.0])], state, cfg, lr=0.1)
        # bias-corrected moments are both 1 after one step
        assert theta[0] == pytest.approx(-0.1 / (1.0 + cfg.adam_eps), rel=1e-12)

    def test_symmetric_updates(self):
        cfg = OptimizerConfig()
        a, b = np.array([0.5]), np.array([0.5])
        state = AdamState.zeros_like([a, b])
        for g in (0.3, -1.0, 2.0):
            adam_step([a, b], [np.array([g]), np.array([g])], state, cfg, lr=0.01)
        assert a[0] == b[0]

    def test_weight_decay_enters_gradient(self):
        cfg = OptimizerConfig(weight_decay=0.5)
        theta = np.array([2.0])
        state = AdamState.zeros_like([theta])
        adam_step([theta], [np.array([0.0])], state, cfg, lr=0.1)
        # g = 0 + 0.5 * 2 = 1 > 0, so the step is -lr
        assert theta[0] == pytest.approx(2.0 - 0.1, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]), OptimizerConfig(), 0.1)

    def test_adam_minimises_quadratic(self):
        p = Parameter(np.array([3.0, -4.0]))
        opt = Adam([p], OptimizerConfig(weight_decay=0.0))
        for _ in range(500):
            p.grad = None
            (p * p).sum().backward()
            opt.step(0.05)
        assert np.abs(p.data).max() < 1e-2


class TestNoam:
    @pytest.mark.parametrize("step,factor", [(500, 0.5), (1000, 1.0), (4000, 0.5), (1, 0.001)])
    def test_schedule_points(self, step, factor):
        cfg = OptimizerConfig(peak_lr=2e-3)
        assert noam_lr(step, cfg) == pytest.approx(factor * 2e-3, rel=1e-12)

    def test_step_zero_rejected(self):
        with pytest.raises(ValueError):
            noam_lr(0, OptimizerConfig())

    def test_peak_at_warmup(self):
        cfg = OptimizerConfig(warmup_steps=50)
        lrs = [noam_lr(s, cfg) for s in range(1, 400)]
        assert int(np.argmax(lrs)) + 1 == 50
