"""Autodiff core: forward values against numpy, gradients against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beatmatch import tensor as T
from beatmatch.tensor import Tensor, grad_check

TOL = 1e-6  # float64 central differences


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestForward:
    def test_matmul_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-5)

    def test_batched_matmul_with_shared_weight(self, rng):
        a, w = rng.normal(size=(2, 5, 3)), rng.normal(size=(3, 4))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(w)).data, a @ w, rtol=1e-5)

    def test_softmax_rows_sum_to_one(self, rng):
        p = T.softmax(Tensor(rng.normal(size=(3, 7)) * 30)).data
        np.testing.assert_allclose(p.sum(-1), 1.0, rtol=1e-6)
        assert np.all(p >= 0)

    def test_layer_norm_standardizes(self, rng):
        x = Tensor(rng.normal(3.0, 5.0, size=(6, 16)))
        out = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(out.mean(-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.std(-1), 1.0, atol=1e-3)

    def test_windows_matches_loop(self, rng):
        x = rng.normal(size=(5, 3))
        k = 2
        out = T.windows(Tensor(x), k).data
        for i in range(5):
            for j in range(2 * k + 1):
                src = i - k + j
                want = x[src] if 0 <= src < 5 else np.zeros(3)
                np.testing.assert_array_equal(out[i, j], want.astype(out.dtype))

    def test_conv1d_matches_direct_sum(self, rng):
        x, w, b = rng.normal(size=(7, 2)), rng.normal(size=(3, 2, 4)), rng.normal(size=4)
        out = T.conv1d(Tensor(x), Tensor(w), Tensor(b), pad=1).data
        xp = np.pad(x, ((1, 1), (0, 0)))
        want = np.array([[sum(xp[i + t] @ w[t] for t in range(3))[o] + b[o] for o in range(4)] for i in range(7)])
        np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-5)

    def test_conv2d_matches_direct_sum(self, rng):
        x, w = rng.normal(size=(2, 5, 4, 1)), rng.normal(size=(3, 3, 1, 2))
        out = T.conv2d(Tensor(x), Tensor(w), pad=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        want = np.zeros((2, 5, 4, 2))
        for n in range(2):
            for i in range(5):
                for j in range(4):
                    want[n, i, j] = np.einsum("abc,abco->o", xp[n, i:i + 3, j:j + 3], w)
        np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-5)

    def test_add_rejects_general_broadcast(self):
        with pytest.raises(T.ShapeError):
            T.add(Tensor(np.zeros((3, 1))), Tensor(np.zeros((1, 3))))

    def test_no_grad_builds_no_graph(self, rng):
        x = leaf(rng, 3)
        with T.no_grad():
            y = T.relu(x)
        assert not y.requires_grad and y._parents == ()

    def test_default_dtype_float32(self):
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
        with T.default_dtype(np.float64):
            assert Tensor([1.0]).data.dtype == np.float64


def _gc(f, inputs, **kw):
    return grad_check(f, inputs, eps=1e-6, **kw)


@pytest.mark.parametrize("seed", range(3))
class TestGradients:
    """Every differentiable op against central differences in float64."""

    @pytest.fixture(autouse=True)
    def _f64(self):
        with T.default_dtype(np.float64):
            yield

    def test_elementwise(self, seed):
        r = np.random.default_rng(seed)
        a, b = leaf(r, 3, 4), leaf(r, 3, 4)
        bias = leaf(r, 4)
        assert _gc(lambda: T.tsum(T.mul(T.sub(T.add(a, bias), b), a)), [a, b, bias]) < TOL
        assert _gc(lambda: T.tsum(T.scale(T.sigmoid(a), 2.5)), [a]) < TOL
        p = leaf(r, 5, lo=0.2, hi=2.0)
        assert _gc(lambda: T.tsum(T.log(p)), [p]) < TOL

    def test_relu_and_clip_away_from_kinks(self, seed):
        r = np.random.default_rng(seed)
        x = Tensor(r.choice([-1, 1], size=(4, 3)) * r.uniform(0.1, 1.0, size=(4, 3)), requires_grad=True)
        assert _gc(lambda: T.tsum(T.mul(T.relu(x), x)), [x]) < TOL
        assert _gc(lambda: T.tsum(T.mul(T.clip(x, -0.5, 0.5), x)), [x]) < 1e-5

    def test_reductions_and_shapes(self, seed):
        r = np.random.default_rng(seed)
        x, w = leaf(r, 2, 3, 4), leaf(r, 3, 4)

        def f():
            y = T.transpose(T.reshape(x, (3, 2, 4)), (1, 0, 2))
            m = T.mean(T.mul(y, T.reshape(T.concat([w, w], axis=0), (2, 3, 4))), axis=1)
            return T.tsum(T.mul(m, m))

        assert _gc(f, [x, w]) < TOL

    def test_getitem_split_swap(self, seed):
        r = np.random.default_rng(seed)
        x = leaf(r, 5, 4)

        def f():
            a, b = T.split(x, [1, 3], axis=-1)
            picked = T.getitem(x, (np.array([0, 2, 2, 4]), slice(None)))
            return T.tsum(T.mul(T.matmul(T.swap_last(a), b), T.matmul(T.swap_last(a), b))) + T.tsum(
                T.mul(picked, picked))

        assert _gc(f, [x]) < TOL

    def test_matmul_batched_and_shared(self, seed):
        r = np.random.default_rng(seed)
        a, b, w = leaf(r, 2, 3, 4), leaf(r, 2, 4, 5), leaf(r, 5, 2)
        assert _gc(lambda: T.tsum(T.matmul(T.matmul(a, b), w)), [a, b, w]) < TOL

    def test_softmax_and_layer_norm(self, seed):
        r = np.random.default_rng(seed)
        x, g, b = leaf(r, 3, 6), leaf(r, 6), leaf(r, 6)
        c = Tensor(r.normal(size=(3, 6)))
        assert _gc(lambda: T.tsum(T.mul(T.softmax(x), c)), [x]) < TOL
        assert _gc(lambda: T.tsum(T.mul(T.layer_norm(x, g, b), c)), [x, g, b]) < 1e-5

    def test_weighted_bce(self, seed):
        r = np.random.default_rng(seed)
        p = leaf(r, 7, lo=0.05, hi=0.95)
        y = (r.random(7) < 0.4).astype(float)
        w = r.random(7)
        assert _gc(lambda: T.weighted_bce(p, y, w), [p]) < TOL

    def test_windows(self, seed):
        r = np.random.default_rng(seed)
        x = leaf(r, 6, 3)
        c = Tensor(r.normal(size=(6, 5, 3)))
        assert _gc(lambda: T.tsum(T.mul(T.windows(x, 2), c)), [x]) < TOL

    def test_conv1d_conv2d(self, seed):
        r = np.random.default_rng(seed)
        x1, w1, b1 = leaf(r, 6, 2), leaf(r, 3, 2, 3), leaf(r, 3)
        c1 = Tensor(r.normal(size=(6, 3)))
        assert _gc(lambda: T.tsum(T.mul(T.conv1d(x1, w1, b1, pad=1), c1)), [x1, w1, b1]) < TOL
        x2, w2, b2 = leaf(r, 2, 4, 5, 2), leaf(r, 3, 3, 2, 3), leaf(r, 3)
        c2 = Tensor(r.normal(size=(2, 4, 5, 3)))
        assert _gc(lambda: T.tsum(T.mul(T.conv2d(x2, w2, b2, pad=1), c2)), [x2, w2, b2]) < TOL
        c3 = Tensor(r.normal(size=(2, 1, 2, 3)))
        assert _gc(lambda: T.tsum(T.mul(T.conv2d(x2, w2, b2, stride=2), c3)), [x2, w2]) < TOL


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_sum_gradient_is_ones(self, n, m, seed):
        x = Tensor(np.random.default_rng(seed).normal(size=(n, m)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((n, m)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 9), st.integers(0, 4), st.integers(0, 2**31 - 1))
    def test_windows_centre_slot_is_identity(self, n, k, seed):
        x = np.random.default_rng(seed).normal(size=(n, 2)).astype(np.float32)
        np.testing.assert_array_equal(T.windows(Tensor(x), k).data[:, k], x)

    def test_grad_accumulates_over_uses(self):
        x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
        T.tsum(T.add(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])


class TestInstrumentation:
    def test_trace_shapes_records_outputs(self):
        with T.trace_shapes() as shapes:
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert (2, 4) in shapes

    def test_flop_counter_matmul(self):
        with T.count_flops() as tally:
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert sum(tally) == 2 * 2 * 3 * 4
