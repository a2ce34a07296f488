import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkcanet import ops
from lkcanet.autodiff import Var, backward, record


def naive_conv2d(x, w, b, dilation, groups):
    """Independent reference: explicit loops over every index."""
    n, cin, h, width = x.shape
    cout, cin_g, k, _ = w.shape
    pad = (k - 1) * dilation // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, h, width), dtype=np.float64)
    out_per_group = cout // groups
    for nn in range(n):
        for co in range(cout):
            g = co // out_per_group
            for y in range(h):
                for xx in range(width):
                    acc = 0.0
                    for ci in range(cin_g):
                        for i in range(k):
                            for j in range(k):
                                acc += (
                                    w[co, ci, i, j]
                                    * xp[nn, g * cin_g + ci, y + i * dilation, xx + j * dilation]
                                )
                    out[nn, co, y, xx] = acc + (b[co] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_identity_1x1(self):
        x = Var(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
        w = Var(np.eye(3).reshape(3, 3, 1, 1))
        out = ops.conv2d(x, w)
        assert np.allclose(out.value, x.value)

    def test_depthwise_center_impulse_identity(self):
        x = Var(np.random.default_rng(1).standard_normal((1, 4, 5, 5)))
        w = np.zeros((4, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        out = ops.conv2d(x, Var(w), groups=4)
        assert np.allclose(out.value, x.value)

    def test_against_naive_loop_oracle(self):
        # Image-scale single-precision data; the reference runs in float64.
        rng = np.random.default_rng(2)
        x = rng.random((2, 4, 6, 6), dtype=np.float32)
        w = rng.random((6, 2, 3, 3), dtype=np.float32) - 0.5
        b = rng.random(6, dtype=np.float32) - 0.5
        out = ops.conv2d(Var(x), Var(w), Var(b), dilation=2, groups=2)
        ref = naive_conv2d(x.astype(np.float64), w.astype(np.float64), b.astype(np.float64), 2, 2)
        assert np.abs(out.value - ref).max() <= 1e-6

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ops.conv2d(Var(np.ones((1, 2, 4, 4))), Var(np.ones((2, 2, 2, 2))))

    def test_group_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ops.conv2d(Var(np.ones((1, 3, 4, 4))), Var(np.ones((4, 1, 3, 3))), groups=2)
        with pytest.raises(ValueError):
            ops.conv2d(Var(np.ones((1, 4, 4, 4))), Var(np.ones((4, 4, 3, 3))), groups=2)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        report = ops.grad_check(
            lambda x, w, b: ops.conv2d(x, w, b, dilation=2, groups=2),
            [rng.standard_normal((2, 4, 5, 5)), rng.standard_normal((6, 2, 3, 3)), rng.standard_normal(6)],
            op_name="conv2d(d=2,g=2)",
            names=["x", "weight", "bias"],
        )
        assert report.passed, report.summary()

    def test_gradients_dilated_depthwise(self):
        rng = np.random.default_rng(4)
        report = ops.grad_check(
            lambda x, w, b: ops.conv2d(x, w, b, dilation=3, groups=3),
            [rng.standard_normal((1, 3, 6, 6)), rng.standard_normal((3, 1, 5, 5)), rng.standard_normal(3)],
            op_name="conv2d(depthwise,d=3)",
        )
        assert report.passed, report.summary()

    def test_zero_grad_out_gives_zero_grads(self):
        rng = np.random.default_rng(5)
        x = Var(rng.standard_normal((1, 2, 4, 4)))
        w = Var(rng.standard_normal((2, 2, 3, 3)))
        out = ops.conv2d(x, w)
        loss = ops.project_scalar(out, np.zeros_like(out.value))
        backward(loss)
        assert np.allclose(x.grad, 0.0)
        assert np.allclose(w.grad, 0.0)

    def test_grouped_gradient_sparsity(self):
        # A loss on group-0 outputs must not touch other groups' weights or
        # input channels.
        rng = np.random.default_rng(6)
        x = Var(rng.standard_normal((1, 8, 4, 4)))
        w = Var(rng.standard_normal((8, 2, 3, 3)))
        out = ops.conv2d(x, w, groups=4)
        mask = np.zeros_like(out.value)
        mask[:, :2] = 1.0  # group 0 outputs only
        backward(ops.project_scalar(out, mask))
        assert np.any(w.grad[:2] != 0)
        assert np.allclose(w.grad[2:], 0.0)
        assert np.any(x.grad[:, :2] != 0)
        assert np.allclose(x.grad[:, 2:], 0.0)

    def test_linearity_without_bias(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 3, 5, 5))
        y = rng.standard_normal((1, 3, 5, 5))
        w = Var(rng.standard_normal((4, 3, 3, 3)))
        a, b = 0.7, -1.3
        lhs = ops.conv2d(Var(a * x + b * y), w).value
        rhs = a * ops.conv2d(Var(x), w).value + b * ops.conv2d(Var(y), w).value
        assert np.abs(lhs - rhs).max() <= 1e-5

    @pytest.mark.parametrize("k,d", [(3, 1), (3, 2), (5, 5), (7, 7)])
    def test_effective_receptive_extent(self, k, d):
        # An all-ones kernel applied to a centered impulse spreads it over
        # exactly (k-1)*d + 1 pixels per axis.
        extent = (k - 1) * d + 1
        size = extent + 4
        x = np.zeros((1, 1, size, size))
        x[0, 0, size // 2, size // 2] = 1.0
        out = ops.conv2d(Var(x), Var(np.ones((1, 1, k, k))), dilation=d).value[0, 0]
        rows = np.nonzero(out.sum(axis=1))[0]
        cols = np.nonzero(out.sum(axis=0))[0]
        assert rows[-1] - rows[0] + 1 == extent
        assert cols[-1] - cols[0] + 1 == extent


class TestLayerNorm:
    def test_constant_input_gives_zeros(self):
        x = Var(np.full((2, 5, 3, 3), 4.2))
        out = ops.layer_norm(x, Var(np.ones(5)), Var(np.zeros(5)))
        assert np.abs(out.value).max() <= 1e-3  # eps-guarded zero variance

    def test_normalized_statistics(self):
        rng = np.random.default_rng(8)
        x = Var(rng.standard_normal((2, 16, 4, 4)))
        out = ops.layer_norm(x, Var(np.ones(16)), Var(np.zeros(16))).value
        mean = out.mean(axis=1)
        var = out.var(axis=1)
        assert np.abs(mean).max() <= 1e-6
        assert np.abs(var - 1.0).max() <= 1e-4

    def test_gradients(self):
        rng = np.random.default_rng(9)
        report = ops.grad_check(
            ops.layer_norm,
            [rng.standard_normal((2, 4, 3, 3)), rng.standard_normal(4), rng.standard_normal(4)],
            op_name="layer_norm",
            names=["x", "gamma", "beta"],
        )
        assert report.passed, report.summary()


class TestGelu:
    def test_zero_maps_to_zero(self):
        assert ops.gelu(Var(np.zeros(3))).value.max() == 0.0

    def test_large_positive_asymptote(self):
        x = np.array([8.0, 10.0, 20.0])
        assert np.abs(ops.gelu(Var(x)).value - x).max() <= 1e-6

    def test_monotone_on_grid(self):
        x = np.linspace(-0.5, 5.0, 200)
        y = ops.gelu(Var(x)).value
        assert np.all(np.diff(y) > 0)

    def test_gradients(self):
        rng = np.random.default_rng(10)
        report = ops.grad_check(ops.gelu, [rng.standard_normal((3, 7))], op_name="gelu")
        assert report.passed, report.summary()


class TestPixelShuffle:
    def test_r1_identity(self):
        x = np.random.default_rng(11).standard_normal((2, 3, 4, 4))
        assert np.array_equal(ops.pixel_shuffle(Var(x), 1).value, x)

    @pytest.mark.parametrize("r", [2, 4, 8])
    def test_round_trip_bit_exact(self, r):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 3 * r * r, 4, 4)).astype(np.float32)
        back = ops.pixel_unshuffle(ops.pixel_shuffle(Var(x), r), r).value
        assert np.array_equal(back, x)

    def test_channel_layout_oracle(self):
        # out[n, c, y*r + i, x*r + j] == in[n, c*r^2 + i*r + j, y, x]
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        out = ops.pixel_shuffle(Var(x), 2).value
        assert np.array_equal(out[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_index_formula_random(self):
        rng = np.random.default_rng(13)
        r, c, h, w = 3, 2, 2, 3
        x = rng.standard_normal((1, c * r * r, h, w))
        out = ops.pixel_shuffle(Var(x), r).value
        for cc in range(c):
            for y in range(h):
                for xx in range(w):
                    for i in range(r):
                        for j in range(r):
                            assert out[0, cc, y * r + i, xx * r + j] == x[0, cc * r * r + i * r + j, y, xx]

    def test_sum_preserved(self):
        x = np.random.default_rng(14).standard_normal((1, 8, 3, 3))
        assert ops.pixel_shuffle(Var(x), 2).value.sum() == pytest.approx(x.sum())

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ValueError):
            ops.pixel_shuffle(Var(np.ones((1, 6, 2, 2))), 2)

    @given(
        st.integers(min_value=1, max_value=3),
        st.integers(min_value=1, max_value=3),
        st.sampled_from([2, 4]),
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=1, max_value=4),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, n, c, r, h, w):
        rng = np.random.default_rng(n * 1000 + c * 100 + r * 10 + h)
        x = rng.standard_normal((n, c * r * r, h, w))
        assert np.array_equal(ops.pixel_unshuffle(ops.pixel_shuffle(Var(x), r), r).value, x)

    def test_gradients(self):
        rng = np.random.default_rng(15)
        report = ops.grad_check(
            lambda x: ops.pixel_shuffle(x, 2), [rng.standard_normal((1, 8, 3, 3))], op_name="pixel_shuffle"
        )
        assert report.passed, report.summary()


class TestChannelAttention:
    def test_zero_weights_halve_input(self):
        x = np.random.default_rng(16).standard_normal((2, 8, 3, 3))
        out = ops.channel_attention(
            Var(x), Var(np.zeros((2, 8))), Var(np.zeros(2)), Var(np.zeros((8, 2))), Var(np.zeros(8))
        )
        assert np.allclose(out.value, x / 2.0)

    def test_uniform_input_stays_uniform(self):
        rng = np.random.default_rng(17)
        x = np.broadcast_to(rng.standard_normal((1, 6, 1, 1)), (1, 6, 4, 4)).copy()
        out = ops.channel_attention(
            Var(x),
            Var(rng.standard_normal((3, 6))),
            Var(rng.standard_normal(3)),
            Var(rng.standard_normal((6, 3))),
            Var(rng.standard_normal(6)),
        ).value
        assert np.abs(out - out[:, :, :1, :1]).max() <= 1e-12

    def test_gradients_through_pool_mlp_sigmoid(self):
        rng = np.random.default_rng(18)
        report = ops.grad_check(
            ops.channel_attention,
            [
                rng.standard_normal((2, 4, 3, 3)),
                rng.standard_normal((2, 4)),
                rng.standard_normal(2),
                rng.standard_normal((4, 2)),
                rng.standard_normal(4),
            ],
            op_name="channel_attention",
            names=["x", "w1", "b1", "w2", "b2"],
        )
        assert report.passed, report.summary()


class TestDropPath:
    def test_eval_mode_is_identity_object(self):
        x = Var(np.ones((3, 2, 2, 2)))
        assert ops.drop_path(x, 0.5, None, training=False) is x

    def test_rate_one_drops_everything(self):
        x = Var(np.ones((3, 2, 2, 2)))
        out = ops.drop_path(x, 1.0, np.random.default_rng(0), training=True)
        assert np.array_equal(out.value, np.zeros_like(x.value))

    def test_kept_samples_rescaled(self):
        rng = np.random.default_rng(19)
        x = Var(np.ones((64, 1, 1, 1)))
        out = ops.drop_path(x, 0.25, rng, training=True).value
        kept = out[out != 0]
        assert np.allclose(kept, 1.0 / 0.75)
        assert 0 < kept.size < 64

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            ops.drop_path(Var(np.ones((1, 1, 1, 1))), -0.1, None, training=True)


class TestGradCheck:
    def test_corrupted_backward_fails_and_names_op(self):
        def bad_scale(x):
            return record(x.value * 2.0, (x,), lambda g: (g * 3.0,))  # wrong vjp

        report = ops.grad_check(bad_scale, [np.ones(3)], op_name="bad_scale")
        assert not report.passed
        assert report.failures
        assert "bad_scale" in report.summary()

    def test_zero_input_edge_case_passes(self):
        report = ops.grad_check(ops.gelu, [np.zeros(4)], op_name="gelu@0")
        assert report.passed, report.summary()

    def test_all_primitives_pass(self):
        rng = np.random.default_rng(20)
        checks = [
            ("relu", ops.relu, [rng.standard_normal(9) + 0.05]),
            ("sigmoid", ops.sigmoid, [rng.standard_normal(9)]),
            ("global_avg_pool", ops.global_avg_pool, [rng.standard_normal((2, 3, 4, 4))]),
            (
                "linear",
                ops.linear,
                [rng.standard_normal((3, 5)), rng.standard_normal((2, 5)), rng.standard_normal(2)],
            ),
            (
                "broadcast_gate",
                ops.broadcast_gate,
                [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3))],
            ),
            (
                "concat",
                lambda a, b: ops.concat_channels([a, b]),
                [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 4, 3, 3))],
            ),
        ]
        for name, fn, args in checks:
            report = ops.grad_check(fn, args, op_name=name)
            assert report.passed, report.summary()
