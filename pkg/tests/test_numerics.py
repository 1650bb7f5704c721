import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rvt.errors import ConfigError, DimensionError, NumericDomainError, UsageError
from rvt.numerics import (
    Tensor,
    avg_pool2d,
    backward,
    concat,
    conv2d,
    cross_entropy,
    finite_diff_check,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    relative_error,
    softmax,
    take,
    tsum,
)


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for q in range(k):
                out[i, j] += a[i, q] * b[q, j]
    return out


def loop_conv(x, w, bias, stride, pad, groups):
    b, cin, h, wd = x.shape
    cout, cpg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    opg = cout // groups
    for n in range(b):
        for o in range(cout):
            g = o // opg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else bias[o]
                    for c in range(cpg):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[n, g * cpg + c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


class TestTensorBasics:
    def test_shape_size_invariant(self):
        t = Tensor(np.zeros((2, 3, 4)))
        assert t.size == math.prod(t.shape) == t.data.size

    def test_integer_input_becomes_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_rejects_unsupported_dtype(self):
        with pytest.raises(TypeError):
            Tensor([1.0], dtype=np.float16)

    def test_no_silent_dtype_mixing(self):
        with pytest.raises(TypeError):
            Tensor(np.ones(3, np.float32)) + Tensor(np.ones(3, np.float64))

    def test_explicit_cast_is_differentiable(self):
        x = t64([1.0, 2.0], grad=True)
        backward(tsum(x.astype(np.float32) * Tensor(np.array([3.0, 4.0], np.float32))))
        np.testing.assert_array_equal(x.grad, [3.0, 4.0])
        assert x.grad.dtype == np.float64

    def test_suffix_broadcast_allowed_other_broadcast_rejected(self):
        a = t64(np.ones((2, 3)))
        assert (a + t64(np.ones(3))).shape == (2, 3)
        with pytest.raises(DimensionError):
            a + t64(np.ones((2, 1)))

    def test_detached_tensor_never_accumulates(self):
        x = t64([1.0, 2.0], grad=True)
        d = x.detach()
        y = tsum(d * d)
        with pytest.raises(UsageError):
            backward(y)
        assert d.grad is None and x.grad is None

    def test_backward_needs_scalar(self):
        x = t64([1.0, 2.0], grad=True)
        with pytest.raises(UsageError):
            backward(x * x)

    def test_sum_of_squares_gradient(self, rng):
        x = t64(rng.normal(size=(3, 4)), grad=True)
        backward(tsum(x * x))
        np.testing.assert_array_equal(x.grad, 2 * x.data)

    def test_fan_out_accumulates_additively(self):
        x = t64([1.5, -2.0], grad=True)
        backward(tsum(x * x + x * 3.0 + x))
        np.testing.assert_allclose(x.grad, 2 * x.data + 4.0)

    def test_repeated_backward_accumulates_into_grad(self):
        x = t64([1.0, 2.0], grad=True)
        backward(tsum(x * 2.0))
        backward(tsum(x * 2.0))
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])

    def test_backward_bitwise_deterministic(self, rng):
        w = rng.normal(size=(5, 3))
        x = rng.normal(size=(4, 5))

        def grads():
            wt = t64(w, grad=True)
            backward(tsum(softmax(matmul(t64(x), wt)) * t64(np.arange(12.0).reshape(4, 3))))
            return wt.grad

        assert grads().tobytes() == grads().tobytes()

    def test_take_and_concat_backward(self):
        x = t64([1.0, 2.0, 3.0], grad=True)
        backward(tsum(concat([take(x, np.array([0, 0, 2]), axis=0), x], axis=0)))
        np.testing.assert_array_equal(x.grad, [3.0, 1.0, 2.0])

    def test_getitem_backward_scatters(self):
        x = t64(np.arange(6.0).reshape(2, 3), grad=True)
        backward(tsum(x[:, 1:]))
        np.testing.assert_array_equal(x.grad, [[0, 1, 1], [0, 1, 1]])


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(2, 5))
        np.testing.assert_array_equal(matmul(t64(np.eye(2)), t64(a)).data, a)

    def test_zeros(self, rng):
        out = matmul(t64(np.zeros((2, 3))), t64(rng.normal(size=(3, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(matmul(t64(a), t64(b)).data, loop_matmul(a, b), rtol=1e-6)

    def test_many_random_shapes(self, rng):
        for _ in range(100):
            m, k, n = rng.integers(1, 6, size=3)
            a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
            np.testing.assert_allclose(matmul(t64(a), t64(b)).data, loop_matmul(a, b), rtol=1e-5, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(t64(np.ones((2, 3))), t64(np.ones((4, 2))))

    def test_backward_formulas(self, rng):
        a, b = t64(rng.normal(size=(3, 4)), True), t64(rng.normal(size=(4, 2)), True)
        g = rng.normal(size=(3, 2))
        backward(matmul(a, b), g)
        np.testing.assert_allclose(a.grad, g @ b.data.T)
        np.testing.assert_allclose(b.grad, a.data.T @ g)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax(t64([0.0, 0.0])).data, [0.5, 0.5])

    def test_single_element(self):
        assert softmax(t64([3.7])).data[0] == 1.0

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_shift_invariance_and_normalisation(self, x, c):
        s = softmax(t64(x)).data
        np.testing.assert_allclose(softmax(t64(x + c)).data, s, atol=1e-7)
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)

    def test_nan_input_rejected(self):
        with pytest.raises(NumericDomainError):
            softmax(t64([0.0, np.nan]))

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.normal(size=(3, 6))
        np.testing.assert_allclose(log_softmax(t64(x)).data, np.log(softmax(t64(x)).data), atol=1e-12)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        out = layer_norm(t64(np.full((2, 5), 3.0)), t64(np.ones(5)), t64(np.zeros(5)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_zero_gamma_gives_beta(self, rng):
        beta = rng.normal(size=4)
        out = layer_norm(t64(rng.normal(size=(3, 4))), t64(np.zeros(4)), t64(beta))
        np.testing.assert_array_equal(out.data, np.broadcast_to(beta, (3, 4)))

    def test_direct_formula(self, rng):
        x, g, b = rng.normal(size=(4, 7)), rng.normal(size=7), rng.normal(size=7)
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        np.testing.assert_allclose(layer_norm(t64(x), t64(g), t64(b), 1e-6).data, (x - mu) / np.sqrt(var + 1e-6) * g + b, atol=1e-6)


class TestGelu:
    def test_zero(self):
        assert gelu(t64([0.0])).data[0] == 0.0

    def test_asymptote(self):
        assert abs(gelu(t64([10.0])).data[0] - 10.0) < 1e-4

    def test_minus_one_against_high_precision_series(self):
        mpmath.mp.dps = 40
        x = mpmath.mpf(-1)
        # Maclaurin series of erf, summed to convergence at 40 digits
        z = x / mpmath.sqrt(2)
        erf = mpmath.mpf(0)
        for n in range(80):
            erf += (-1) ** n * z ** (2 * n + 1) / (mpmath.factorial(n) * (2 * n + 1))
        erf *= 2 / mpmath.sqrt(mpmath.pi)
        oracle = float(x * (1 + erf) / 2)
        assert abs(gelu(t64([-1.0])).data[0] - oracle) <= 1e-6


class TestConv2d:
    def test_delta_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 3, 5, 4))
        w = np.zeros((3, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d(t64(x), t64(w), padding=1, groups=3).data, x)

    def test_ones_kernel_on_constant(self):
        out = conv2d(t64(np.full((1, 1, 5, 5), 0.7)), t64(np.ones((1, 1, 3, 3))), padding=1)
        assert out.data[0, 0, 2, 2] == pytest.approx(9 * 0.7, abs=1e-12)

    def test_six_loop_oracle(self, rng):
        x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 2, 3, 3))
        np.testing.assert_allclose(conv2d(t64(x), t64(w)).data, loop_conv(x, w, None, 1, 0, 1), rtol=1e-5)

    def test_many_random_configurations(self, rng):
        for _ in range(100):
            groups = int(rng.choice([1, 2]))
            cin = groups * int(rng.integers(1, 3))
            cout = groups * int(rng.integers(1, 3))
            k = int(rng.choice([1, 3]))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
            h, w_ = rng.integers(k, 7, size=2)
            x = rng.normal(size=(1, cin, h, w_))
            w = rng.normal(size=(cout, cin // groups, k, k))
            b = rng.normal(size=cout)
            got = conv2d(t64(x), t64(w), t64(b), stride=stride, padding=pad, groups=groups).data
            np.testing.assert_allclose(got, loop_conv(x, w, b, stride, pad, groups), rtol=1e-5, atol=1e-10)

    def test_non_positive_output_extent(self):
        with pytest.raises(ConfigError):
            conv2d(t64(np.ones((1, 1, 2, 2))), t64(np.ones((1, 1, 3, 3))))

    def test_groups_must_divide_channels(self):
        with pytest.raises(ConfigError):
            conv2d(t64(np.ones((1, 3, 4, 4))), t64(np.ones((2, 1, 3, 3))), groups=2)


class TestAvgPool:
    def test_constant(self):
        np.testing.assert_array_equal(avg_pool2d(t64(np.full((1, 2, 4, 6), 0.25))).data, np.full((1, 2, 2, 3), 0.25))

    def test_single_window(self):
        assert avg_pool2d(t64([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 2.5

    def test_window_oracle_exact(self, rng):
        x = rng.normal(size=(1, 1, 4, 4))
        oracle = np.array([[(x[0, 0, 2 * i, 2 * j] + x[0, 0, 2 * i, 2 * j + 1] + x[0, 0, 2 * i + 1, 2 * j] + x[0, 0, 2 * i + 1, 2 * j + 1]) for j in range(2)] for i in range(2)])
        got = avg_pool2d(t64(x)).data[0, 0]
        np.testing.assert_allclose(got, oracle / 4, rtol=0, atol=4e-16)

    def test_odd_extent_replicates_edge(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out = avg_pool2d(t64(x)).data[0, 0]
        assert out.shape == (2, 2)
        assert out[1, 1] == 8.0
        assert out[0, 1] == (2 + 2 + 5 + 5) / 4


class TestCrossEntropy:
    def test_uniform(self):
        loss = cross_entropy(t64(np.zeros((3, 10))), np.array([0, 4, 9]))
        assert loss.item() == pytest.approx(2.302585, abs=1e-6)

    def test_saturated(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1e4
        assert cross_entropy(t64(logits), np.array([2])).item() < 1e-6

    def test_log_sum_exp_oracle(self, rng):
        logits = rng.normal(size=(2, 5)) * 3
        labels = np.array([1, 4])
        mpmath.mp.dps = 30
        oracle = np.mean([float(mpmath.log(sum(mpmath.exp(mpmath.mpf(v)) for v in row)) - row[y]) for row, y in zip(logits, labels)])
        assert abs(cross_entropy(t64(logits), labels).item() - oracle) <= 1e-6

    def test_gradient_is_softmax_minus_onehot(self, rng):
        x = t64(rng.normal(size=(4, 3)), grad=True)
        y = np.array([0, 2, 1, 1])
        backward(cross_entropy(x, y))
        expected = (softmax(t64(x.data)).data - np.eye(3)[y]) / 4
        np.testing.assert_allclose(x.grad, expected, atol=1e-15)

    def test_out_of_range_label(self):
        with pytest.raises(IndexError):
            cross_entropy(t64(np.zeros((2, 3))), np.array([0, 3]))


class TestFiniteDifferences:
    def test_sum_is_exact(self, rng):
        # dyadic inputs and a power-of-two step make every difference exact
        x = rng.integers(-64, 64, size=(3, 4)) / 8.0
        assert finite_diff_check(lambda a: tsum(a), x, h=2.0**-17) == 0.0

    def test_quadratic_form(self, rng):
        a = rng.normal(size=(4, 4))
        x = rng.normal(size=(1, 4))
        err = finite_diff_check(lambda v: tsum(matmul(v, t64(a)) * v), x, h=1e-5)
        assert err <= 1e-8

    def test_paas_scalar_readout(self, rng):
        from rvt.attention import paas_attention

        q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
        wp = rng.uniform(0.5, 1.5, size=(3, 3))
        r = rng.normal(size=(3, 4))
        err = finite_diff_check(lambda *xs: tsum(paas_attention(*xs) * t64(r)), [q, k, v, wp], h=1e-5)
        assert err <= 1e-6

    def test_relative_error_floor(self):
        assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-9])) < 1e-5
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0

    def test_full_block_gradient(self, rng):
        from rvt.model.layers import transformer_block_forward

        c = 8
        names = ["norm1.g", "norm1.b", "attn.q_w", "attn.q_b", "attn.k_w", "attn.k_b", "attn.v_w", "attn.v_b",
                 "attn.o_w", "attn.o_b", "norm2.g", "norm2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"]
        shapes = {"_w": (c, c), "w1": (c, 16), "b1": (16,), "w2": (16, c)}
        arrays = []
        for n in names:
            shape = next((s for key, s in shapes.items() if n.endswith(key)), (c,))
            arrays.append(rng.normal(size=shape) * 0.4 + (1.0 if n.endswith(".g") else 0.0))
        x = rng.normal(size=(1, 4, c))
        r = rng.normal(size=(1, 4, c))

        def f(x, *ps):
            return tsum(transformer_block_forward(x, dict(zip(names, ps)), 2, (2, 2)) * Tensor(r.astype(x.dtype)))

        assert finite_diff_check(f, [x, *arrays], dtype=np.float64) <= 1e-6
        assert finite_diff_check(f, [x, *arrays], dtype=np.float32) <= 1e-3


class TestLinear:
    def test_matches_affine(self, rng):
        x, w, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
        np.testing.assert_allclose(linear(t64(x), t64(w), t64(b)).data, x @ w + b, atol=1e-12)
