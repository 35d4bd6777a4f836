import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbmif import autodiff as ad
from dbmif.autodiff import Tensor
from dbmif.errors import ConfigurationError, PreconditionError
from dbmif.nn import Conv1d, WeightNormParam
from dbmif.optim import AdamState, CosineSchedule, adam_step

from conftest import numeric_grad


def direct_conv1d(x, w, stride=1, padding=0, dilation=1):
    """Loop oracle for a single-group conv on (C_in, T) input."""
    c_out, c_in, k = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding)))
    t_out = (xp.shape[1] - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((c_out, t_out))
    for o in range(c_out):
        for t in range(t_out):
            for c in range(c_in):
                for j in range(k):
                    out[o, t] += w[o, c, j] * xp[c, t * stride + j * dilation]
    return out


class TestConv1d:
    def test_identity_kernel(self):
        out = ad.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0]]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_stride_two_box_kernel(self):
        out = ad.conv1d(Tensor([[1.0, 1.0, 1.0, 1.0]]), Tensor([[[1.0, 1.0]]]), stride=2)
        np.testing.assert_array_equal(out.data, [[2.0, 2.0]])

    def test_length_formula_16000(self):
        assert ad.conv_output_length(16000, 41, stride=4, padding=20) == 4000
        out = ad.conv1d(Tensor(np.zeros((1, 16000))), Tensor(np.zeros((1, 1, 41))), stride=4, padding=20)
        assert out.shape == (1, 4000)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (2, 1, 1), (3, 2, 2), (1, 3, 3)])
    def test_matches_loop_oracle(self, rng, f64, stride, padding, dilation):
        x = rng.standard_normal((3, 17))
        w = rng.standard_normal((2, 3, 3))
        out = ad.conv1d(Tensor(x), Tensor(w), stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_allclose(out.data, direct_conv1d(x, w, stride, padding, dilation), atol=1e-12)

    def test_groups_are_block_diagonal(self, rng, f64):
        x = rng.standard_normal((4, 9))
        w = rng.standard_normal((6, 2, 3))
        out = ad.conv1d(Tensor(x), Tensor(w), groups=2).data
        np.testing.assert_allclose(out[:3], direct_conv1d(x[:2], w[:3]), atol=1e-12)
        np.testing.assert_allclose(out[3:], direct_conv1d(x[2:], w[3:]), atol=1e-12)

    def test_group_mismatch_is_configuration_error(self):
        with pytest.raises(ConfigurationError, match="groups"):
            ad.conv1d(Tensor(np.zeros((3, 8))), Tensor(np.zeros((4, 1, 3))), groups=2)


class TestConvTranspose:
    def test_single_frame_expansion(self):
        out = ad.conv_transpose1d(Tensor([[1.0]]), Tensor([[[1.0, 1.0]]]), stride=2)
        np.testing.assert_array_equal(out.data, [[1.0, 1.0]])

    def test_length_formula(self):
        assert ad.conv_transpose_output_length(250, 8, stride=2, padding=3) == 500
        out = ad.conv_transpose1d(Tensor(np.zeros((2, 250))), Tensor(np.zeros((2, 1, 8))), stride=2, padding=3)
        assert out.shape == (1, 500)

    @pytest.mark.parametrize("seed", range(5))
    def test_adjoint_of_conv1d(self, f64, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 4, 7))
        w = rng.standard_normal((3, 4, 3))
        y = rng.standard_normal((1, 3, 4))
        fwd = ad.conv1d(Tensor(x), Tensor(w), stride=2, padding=1).data
        assert fwd.shape == y.shape
        # conv_transpose1d takes (C_in, C_out, K): swap conv1d's channel axes
        adj = ad.conv_transpose1d(Tensor(y), Tensor(w), stride=2, padding=1).data
        assert np.isclose(np.sum(fwd * y), np.sum(x * adj), rtol=1e-5)


class TestPointwise:
    def test_values(self):
        assert ad.pointwise("sigmoid", Tensor(0.0)).item() == 0.5
        assert ad.pointwise("leaky_relu", Tensor(-1.0), alpha=0.1).item() == pytest.approx(-0.1)
        np.testing.assert_array_equal(ad.pointwise("mul", Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).data, [8, 15])

    def test_scalar_broadcast_only(self):
        assert (Tensor([1.0, 2.0]) + 1.0).data.tolist() == [2.0, 3.0]
        with pytest.raises(ConfigurationError, match="incompatible"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(3))

    def test_sigmoid_saturates_without_overflow(self):
        out = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.all(np.isfinite(out))
        assert out[1] == 1.0


class TestPooling:
    def test_small_map(self):
        np.testing.assert_array_equal(ad.global_avg_pool(Tensor([[1.0, 3.0], [2.0, 2.0]])).data, [2.0, 2.0])

    def test_constant(self):
        np.testing.assert_array_equal(ad.global_avg_pool(Tensor(np.full((3, 5), 7.0))).data, [7.0] * 3)

    def test_against_summation(self, rng, f64):
        x = rng.standard_normal((3, 50))
        expected = [sum(row) / 50 for row in x.tolist()]
        np.testing.assert_allclose(ad.global_avg_pool(Tensor(x)).data, expected, atol=1e-6)

    def test_zero_frames(self):
        with pytest.raises(PreconditionError):
            ad.global_avg_pool(Tensor(np.zeros((2, 0))))


class TestBackward:
    def test_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x**2).sum().backward()
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x**2).sum().backward()
        (x**2).sum().backward()
        np.testing.assert_array_equal(x.grad, [4, 8])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(PreconditionError, match="scalar"):
            (x * 2.0).backward()

    def test_shared_subexpression(self, f64):
        x = Tensor([0.3, -0.7], requires_grad=True)
        y = ad.tanh(x)
        (y * y + y).sum().backward()
        t = np.tanh(x.data)
        np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_conv_composite_against_finite_differences(self, rng, f64):
        x = rng.standard_normal((1, 2, 9))
        w = rng.standard_normal((3, 2, 3))
        wt = Tensor(w, requires_grad=True)

        def loss():
            return ad.sum_(ad.tanh(ad.conv1d(Tensor(x), wt, stride=2, padding=1)) ** 2)

        loss().backward()
        num = numeric_grad(lambda: loss().item(), wt.data)
        np.testing.assert_allclose(wt.grad, num, rtol=1e-5, atol=1e-8)


class TestWeightNorm:
    def test_channel_norm_equals_magnitude(self, rng, f64):
        v = Tensor(rng.standard_normal((5, 3, 4)))
        g = Tensor(rng.uniform(0.5, 2.0, 5))
        w = ad.weight_norm(v, g).data
        np.testing.assert_allclose(np.sqrt((w**2).sum(axis=(1, 2))), g.data, rtol=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
    def test_direction_scale_invariance(self, scale, seed):
        with ad.precision(64):
            rng = np.random.default_rng(seed)
            v = rng.standard_normal((4, 2, 3))
            g = Tensor(rng.standard_normal(4))
            base = WeightNormParam(Tensor(v), g).effective().data
            scaled = WeightNormParam(Tensor(v * scale), g).effective().data
            np.testing.assert_allclose(scaled, base, atol=1e-6)

    def test_init_effective_weight_equals_direction(self, rng):
        conv = Conv1d(4, 6, 3, rng)
        np.testing.assert_allclose(conv.weight.effective().data, conv.direction.data, rtol=1e-5)


class TestAdam:
    def test_first_step(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([1.0])
        state = AdamState(CosineSchedule(0.1, 100), beta1=0.5, beta2=0.9)
        adam_step(state, [p])
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)
        assert p.grad is None

    def test_zero_grad_leaves_parameter(self):
        p = Tensor([1.5], requires_grad=True)
        p.grad = np.array([0.0])
        adam_step(AdamState(CosineSchedule(0.1, 10)), [p])
        assert p.data[0] == np.float32(1.5)

    def test_missing_grad_names_parameter(self):
        p = Tensor([1.0], requires_grad=True, name="gen.head.bias")
        with pytest.raises(PreconditionError, match="gen.head.bias"):
            adam_step(AdamState(CosineSchedule(0.1, 10)), [p])

    def test_cosine_schedule(self):
        sched = CosineSchedule(3e-4, 1000)
        assert sched.lr_at(0) == 3e-4
        assert sched.lr_at(500) == pytest.approx(1.5e-4)
        assert sched.lr_at(1000) == pytest.approx(0.0, abs=1e-18)
        assert CosineSchedule(1.0, 10, floor=0.1).lr_at(10) == pytest.approx(0.1)


def test_forward_is_deterministic(rng):
    x = rng.standard_normal((2, 4, 64)).astype(np.float32)
    conv_a = Conv1d(4, 8, 5, np.random.default_rng(3), stride=2, padding=2)
    conv_b = Conv1d(4, 8, 5, np.random.default_rng(3), stride=2, padding=2)
    assert np.array_equal(conv_a(Tensor(x)).data, conv_b(Tensor(x)).data)
