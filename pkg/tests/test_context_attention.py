import itertools
import math

import numpy as np
import pytest

from beatmatch import tensor as T
from beatmatch.attention import (CapacityError, ClassifierHead, EncoderLayer, SelfAttention, classifier_head,
                                 exact_attention, linear_attention)
from beatmatch.context import LocalEncoder, local_fuse, spos_contexts
from beatmatch.tensor import Tensor

from oracles import naive_contexts


class TestSPoS:
    def test_three_rows_k1(self):
        a, b, c = [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]
        z = [0.0, 0.0]
        ctx = spos_contexts(Tensor(np.array([a, b, c])), 1)
        np.testing.assert_array_equal(ctx.values.data, [[z, a, b], [a, b, c], [b, c, z]])
        assert ctx.padding_mask.tolist() == [[True, False, False], [False, False, False], [False, False, True]]

    def test_k0_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
        np.testing.assert_array_equal(spos_contexts(Tensor(x), 0).values.data[:, 0], x)

    def test_exhaustive_against_loop(self):
        rng = np.random.default_rng(7)
        for n, k, c in itertools.product(range(1, 9), range(0, 4), range(1, 5)):
            x = rng.normal(size=(n, c)).astype(np.float32)
            ctx = spos_contexts(Tensor(x), k)
            np.testing.assert_array_equal(ctx.values.data, naive_contexts(x, k))
            real = (~ctx.padding_mask).sum(axis=1) - 1
            want = [min(k, i) + min(k, n - 1 - i) for i in range(n)]
            assert real.tolist() == want

    def test_no_full_copy_per_row(self):
        # the strided view never materializes more than the padded buffer plus the output
        x = Tensor(np.zeros((50, 4)))
        with T.trace_shapes() as shapes:
            spos_contexts(x, 3)
        assert all(int(np.prod(s)) <= 50 * 7 * 4 for s in shapes)


class TestLocalFuse:
    def enc(self, k, dim=8, layers=2):
        return LocalEncoder(dim, k, layers, 2, 16, np.random.default_rng(0))

    def test_shape_preserved(self):
        x = Tensor(np.random.default_rng(1).normal(size=(7, 8)))
        assert local_fuse(spos_contexts(x, 2), self.enc(2)).shape == (7, 8)

    def test_single_token(self):
        x = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
        enc = self.enc(0)
        out = local_fuse(spos_contexts(x, 0), enc)
        want = enc.layers[1](enc.layers[0](T.add(T.reshape(x, (1, 1, 8)), enc.pos)))
        np.testing.assert_allclose(out.data, want.data[:, 0], rtol=1e-6)

    def test_locality(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(9, 8)).astype(np.float32)
        enc = self.enc(2)
        base = local_fuse(spos_contexts(Tensor(x), 2), enc).data
        x2 = x.copy()
        x2[6] += 5.0  # row i + k + 1 for i = 3
        moved = local_fuse(spos_contexts(Tensor(x2), 2), enc).data
        np.testing.assert_array_equal(base[:4], moved[:4])
        assert not np.allclose(base[4:], moved[4:])

    def test_per_row_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 8)).astype(np.float32)
        enc = self.enc(1)
        out = local_fuse(spos_contexts(Tensor(x), 1), enc).data
        ctx = naive_contexts(x, 1)
        for i in range(3):
            h = T.add(Tensor(ctx[i:i + 1]), enc.pos)
            for layer in enc.layers:
                h = layer(h)
            np.testing.assert_allclose(out[i], h.data[0, 1], rtol=1e-5, atol=1e-6)

    def test_heads_must_divide(self):
        with pytest.raises(ValueError):
            LocalEncoder(10, 1, 1, 4, 16, np.random.default_rng(0))


def identity_banks(layer: EncoderLayer, n: int):
    e = np.zeros_like(layer.attn.proj_e.data)
    e[:, :n] = np.eye(n)
    layer.attn.proj_e.data[:] = e
    layer.attn.proj_f.data[:] = e


class TestAttention:
    def test_single_token_is_value_row(self):
        att = SelfAttention(8, 2, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
        out, probs = att.heads_output(x, return_probs=True)
        np.testing.assert_allclose(probs.data, 1.0)
        np.testing.assert_allclose(out.data, att.wv(x).data, rtol=1e-6)

    def test_identical_rows_give_identical_outputs(self):
        layer = EncoderLayer(8, 2, 16, np.random.default_rng(0))
        x = Tensor(np.tile(np.random.default_rng(1).normal(size=(1, 8)), (5, 1)))
        out = exact_attention(x, layer).data
        np.testing.assert_allclose(out, np.tile(out[:1], (5, 1)), rtol=1e-6)

    def test_probability_rows_sum_to_one(self):
        att = SelfAttention(8, 2, np.random.default_rng(0))
        _, probs = att.heads_output(Tensor(np.random.default_rng(1).normal(size=(6, 8))), return_probs=True)
        np.testing.assert_allclose(probs.data.sum(-1), 1.0, atol=1e-6)

    def test_softmax_shift_invariance(self):
        x = np.random.default_rng(4).normal(size=(3, 5))
        np.testing.assert_allclose(T.softmax(Tensor(x)).data, T.softmax(Tensor(x + 7.0)).data, atol=1e-6)

    @pytest.mark.parametrize("n", [1, 5, 16])
    def test_identity_banks_recover_exact(self, n):
        exact = EncoderLayer(16, 4, 32, np.random.default_rng(0))
        low = EncoderLayer(16, 4, 32, np.random.default_rng(0), low_rank=n if n > 1 else 1, n_max=64)
        low.load_state_dict({k: v for k, v in exact.state_dict().items()} | {
            "attn.proj_e": low.attn.proj_e.data, "attn.proj_f": low.attn.proj_f.data})
        identity_banks(low, n)
        x = Tensor(np.random.default_rng(1).normal(size=(n, 16)))
        np.testing.assert_allclose(linear_attention(x, low).data, exact_attention(x, exact).data, atol=1e-5)

    def test_single_row_scales_value_by_softmax_weighted_f(self):
        att = SelfAttention(8, 2, np.random.default_rng(0), low_rank=4, n_max=32)
        x = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
        out, probs = att.heads_output(x, return_probs=True)
        f = att.proj_f.data[:, 0].astype(np.float64)
        scale = probs.data[:, 0, :] @ f  # per head
        v = att.wv(x).data.reshape(2, 4)
        np.testing.assert_allclose(out.data.reshape(2, 4), scale[:, None] * v, rtol=1e-5)
        # unit F column: any E gives exact attention
        att.proj_f.data[:, 0] = 1.0
        np.testing.assert_allclose(att.heads_output(x).data, att.wv(x).data, rtol=1e-5)

    def test_random_banks_error_is_finite(self):
        exact = EncoderLayer(16, 4, 32, np.random.default_rng(0))
        low = EncoderLayer(16, 4, 32, np.random.default_rng(9), low_rank=16, n_max=128)
        state = exact.state_dict()
        state.update({"attn.proj_e": low.attn.proj_e.data, "attn.proj_f": low.attn.proj_f.data})
        low.load_state_dict(state)
        x = Tensor(np.random.default_rng(1).normal(size=(64, 16)))
        a, b = exact.attn(x).data, low.attn(x).data
        err = np.linalg.norm(a - b) / np.linalg.norm(a)
        assert math.isfinite(err)

    def test_capacity(self):
        layer = EncoderLayer(8, 2, 16, np.random.default_rng(0), low_rank=4, n_max=16)
        with pytest.raises(CapacityError):
            layer(Tensor(np.zeros((17, 8))))

    def test_low_rank_avoids_square_intermediates(self):
        n = 300
        layer = EncoderLayer(8, 2, 16, np.random.default_rng(0), low_rank=4, n_max=512)
        with T.trace_shapes() as shapes:
            linear_attention(Tensor(np.zeros((n, 8))), layer)
        assert not any(s.count(n) >= 2 for s in shapes)
        exact = EncoderLayer(8, 2, 16, np.random.default_rng(0))
        with T.trace_shapes() as shapes:
            exact_attention(Tensor(np.zeros((n, 8))), exact)
        assert any(s.count(n) >= 2 for s in shapes)

    def test_wrong_variant(self):
        with pytest.raises(ValueError):
            linear_attention(Tensor(np.zeros((2, 8))), EncoderLayer(8, 2, 16, np.random.default_rng(0)))

    def test_permutation_equivariance(self):
        layer = EncoderLayer(8, 2, 16, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(5, 8))
        perm = np.array([3, 1, 4, 0, 2])
        np.testing.assert_allclose(exact_attention(Tensor(x[perm]), layer).data,
                                   exact_attention(Tensor(x), layer).data[perm], rtol=1e-5, atol=1e-6)


class TestHead:
    def test_zero_head(self):
        head = ClassifierHead(4, np.random.default_rng(0))
        head.proj.weight.data[:] = 0
        head.proj.bias.data[:] = 0
        np.testing.assert_array_equal(classifier_head(Tensor(np.ones((3, 4))), head).data, 0.5)

    def test_closed_form(self):
        head = ClassifierHead(1, np.random.default_rng(0))
        head.proj.weight.data[:] = 1
        head.proj.bias.data[:] = 0
        assert head(Tensor(np.array([[math.log(3)]]))).data[0] == pytest.approx(0.75, abs=1e-6)

    def test_rows_independent_and_monotone(self):
        head = ClassifierHead(1, np.random.default_rng(0))
        head.proj.weight.data[:] = 1
        h = np.array([[0.1], [0.2], [0.3]])
        base = head(Tensor(h)).data
        h[1] += 1
        moved = head(Tensor(h)).data
        assert moved[1] > base[1] and moved[0] == base[0] and moved[2] == base[2]
