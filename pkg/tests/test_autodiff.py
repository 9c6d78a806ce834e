import numpy as np
import pytest

from smtpp import autodiff as ad


def rand(*shape, seed=0, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal(shape)


class TestForward:
    def test_tanh_of_zeros_is_zeros(self):
        out = ad.tanh(ad.Tensor(np.zeros((3, 4))))
        assert np.all(out.data == 0.0)

    def test_softmax_single_element_row(self):
        out = ad.softmax(ad.Tensor([[7.3]]))
        assert out.data == pytest.approx(1.0)

    def test_identity_matmul(self):
        x = rand(2, 2, seed=1)
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor(x))
        np.testing.assert_allclose(out.data, x)

    def test_numpy_passthrough(self):
        # ops on plain arrays return plain arrays
        x = rand(3, 3, seed=2)
        assert isinstance(ad.tanh(x), np.ndarray)
        assert isinstance(ad.matmul(x, x), np.ndarray)
        np.testing.assert_allclose(ad.softplus(x), np.logaddexp(0, x))

    def test_deterministic(self):
        x = rand(4, 4, seed=3)
        a = ad.softmax(ad.tanh(ad.Tensor(x))).data
        b = ad.softmax(ad.tanh(ad.Tensor(x))).data
        np.testing.assert_array_equal(a, b)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))

    def test_nonfinite_reports_op(self):
        with pytest.raises(ad.GraphError, match="'log'"):
            ad.log(ad.Tensor([-1.0]))

    def test_masked_fill(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        mask = np.array([[False, True], [False, False]])
        out = ad.masked_fill(x, mask, -5.0)
        assert out.data[0, 1] == -5.0 and out.data[0, 0] == 1.0
        ad.backward(ad.sum_(out))
        np.testing.assert_array_equal(x.grad, 1.0 - mask)


class TestBackward:
    def test_square_gradient(self):
        x = ad.Tensor([3.0], name="x", requires_grad=True)
        ad.backward(x * x)
        assert x.grad == pytest.approx([6.0])

    def test_sum_tanh_at_zero(self):
        x = ad.Tensor(np.zeros((2, 3)), requires_grad=True)
        ad.backward(ad.sum_(ad.tanh(x)))
        np.testing.assert_allclose(x.grad, np.ones((2, 3)))

    def test_backward_requires_scalar(self):
        x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(x * x)

    def test_grad_accumulates_across_uses(self):
        x = ad.Tensor([2.0], requires_grad=True)
        ad.backward(x * x + x * 3.0)
        assert x.grad == pytest.approx([7.0])

    def test_relu_subgradient_zero_at_kink(self):
        x = ad.Tensor([0.0, -1.0, 2.0], requires_grad=True)
        ad.backward(ad.sum_(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


class TestFiniteDiff:
    def test_linear_map_is_exact(self):
        w = rand(3, 2, seed=5)

        def fn(leaves):
            return ad.sum_(ad.matmul(leaves["x"], w))

        assert ad.finite_diff_check(fn, {"x": rand(4, 3, seed=6)}) < 1e-8

    def test_matmul_softmax_composite(self):
        a = rand(3, 4, seed=7)

        def fn(leaves):
            return ad.sum_(ad.softmax(ad.matmul(leaves["w"], leaves["v"])) * a)

        params = {"w": rand(3, 5, seed=8), "v": rand(5, 4, seed=9)}
        assert ad.finite_diff_check(fn, params) < 1e-4

    def test_relu_probed_away_from_kink(self):
        def fn(leaves):
            return ad.sum_(ad.relu(leaves["x"]))

        x = rand(4, 4, seed=10)
        x[np.abs(x) < 0.1] = 0.5      # keep clear of the kink
        assert ad.finite_diff_check(fn, {"x": x}) < 1e-4

    def test_step_bounds_enforced(self):
        with pytest.raises(ValueError):
            ad.finite_diff_check(lambda l: ad.sum_(l["x"]), {"x": np.ones(2)}, step=1e-2)

    @pytest.mark.parametrize("op", [
        ad.tanh, ad.exp, ad.softplus, ad.sigmoid, ad.softmax, ad.log_softmax,
    ])
    def test_unary_ops_randomized(self, op):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            shape = tuple(rng.integers(1, 17, size=2))
            x = rng.standard_normal(shape)
            weight = rng.standard_normal(shape)

            def fn(leaves):
                return ad.sum_(op(leaves["x"]) * weight)

            assert ad.finite_diff_check(fn, {"x": x}) < 1e-4

    def test_log_positive_domain(self):
        def fn(leaves):
            return ad.sum_(ad.log(leaves["x"]))

        x = np.abs(rand(3, 3, seed=11)) + 0.5
        assert ad.finite_diff_check(fn, {"x": x}) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_binary_ops_with_broadcasting(self, seed):
        rng = np.random.default_rng(seed + 20)
        a = rng.standard_normal((6, 5))
        b = rng.standard_normal((6, 1))
        c = rng.standard_normal((6, 5))

        def fn(leaves):
            prod = leaves["a"] * leaves["b"]
            quot = prod / (ad.softplus(leaves["c"]) + 1.0)
            return ad.sum_(quot + leaves["a"])

        assert ad.finite_diff_check(fn, {"a": a, "b": b, "c": c}) < 1e-4

    def test_structural_ops(self):
        rng = np.random.default_rng(30)
        weight = rng.standard_normal((10, 3))

        def fn(leaves):
            g = ad.take_rows(leaves["table"], np.array([0, 2, 2, 1]))
            r = ad.repeat_rows(g, 2)              # (8, 3)
            joined = ad.concat([r[1:7], g], axis=0)   # (10, 3)
            return ad.mean(ad.reshape(joined * weight, (-1,)))

        table = rng.standard_normal((4, 3))
        assert ad.finite_diff_check(fn, {"table": table}) < 1e-4

    def test_mean_and_sum_axes(self):
        def fn(leaves):
            m = ad.mean(leaves["x"], axis=1, keepdims=True)
            centered = leaves["x"] - m
            return ad.sum_(centered * centered)

        assert ad.finite_diff_check(fn, {"x": rand(5, 7, seed=31)}) < 1e-4

    def test_matmul_transpose_flag(self):
        def fn(leaves):
            return ad.sum_(ad.matmul(leaves["a"], leaves["b"], transpose_b=True))

        params = {"a": rand(4, 3, seed=32), "b": rand(5, 3, seed=33)}
        assert ad.finite_diff_check(fn, params) < 1e-4
