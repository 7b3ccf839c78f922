import math

import pytest

from roundrec.compute import RngState, Tensor, dense, dropout, layer_norm, masked_softmax, ops

from helpers import max_abs_diff, rand_tensor


class TestLayerNorm:
    def test_two_point_standardization(self):
        x = Tensor.from_values([[1.0, 3.0]])
        out = layer_norm(x, Tensor.full((2,), 1.0), Tensor.zeros((2,)), eps=1e-12)
        assert max_abs_diff(out, Tensor.from_values([-1.0, 1.0])) < 1e-5

    def test_constant_row_collapses_to_beta(self):
        x = Tensor.from_values([[5.0, 5.0, 5.0]])
        beta = Tensor.from_values([0.1, 0.2, 0.3])
        out = layer_norm(x, Tensor.full((3,), 1.0), beta, eps=1e-12)
        assert max_abs_diff(out, beta) < 1e-5

    def test_scale_invariance(self):
        rng = RngState(11)
        x = rand_tensor((4, 8), rng)
        x2 = ops.scale(x, 2.0)
        g = Tensor.full((8,), 1.0)
        b = Tensor.zeros((8,))
        assert max_abs_diff(layer_norm(x, g, b, 1e-12), layer_norm(x2, g, b, 1e-12)) < 1e-5

    def test_rows_standardized(self):
        rng = RngState(12)
        x = rand_tensor((16, 10), rng)
        out = layer_norm(x, Tensor.full((10,), 1.0), Tensor.zeros((10,)), 1e-12)
        vals = out.tolist()
        for r in range(16):
            row = vals[r * 10:(r + 1) * 10]
            mu = sum(row) / 10
            var = sum((v - mu) ** 2 for v in row) / 10
            assert abs(mu) < 1e-6
            assert abs(var - 1.0) < 1e-4

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor.zeros((1, 2)), Tensor.full((2,), 1.0),
                       Tensor.zeros((2,)), eps=0.0)


class TestMaskedSoftmax:
    def test_single_unmasked_entry_gets_full_weight(self):
        scores = Tensor.from_values([[5.0, -2.0, 9.0]])
        out = masked_softmax(scores, bytearray([0, 1, 0]))
        assert out.tolist() == [0.0, 1.0, 0.0]

    def test_two_equal_scores_split_evenly(self):
        scores = Tensor.from_values([[3.0, 3.0, 100.0]])
        out = masked_softmax(scores, bytearray([1, 1, 0]))
        assert max_abs_diff(out, Tensor.from_values([0.5, 0.5, 0.0])) < 1e-7

    def test_matches_exp_normalize_oracle(self):
        scores = Tensor.from_values([[1.0, 2.0, 3.0]])
        out = masked_softmax(scores, bytearray([1, 1, 1]))
        exps = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        total = sum(exps)
        for got, want in zip(out.tolist(), [e / total for e in exps]):
            assert abs(got - want) < 1e-7

    def test_rows_sum_to_one_over_unmasked(self):
        rng = RngState(13)
        scores = rand_tensor((20, 7), rng, -5, 5)
        mask = bytearray(1 if rng.uniform() < 0.7 else 0 for _ in range(140))
        for r in range(20):
            if not any(mask[r * 7:(r + 1) * 7]):
                mask[r * 7] = 1
        out = masked_softmax(scores, mask)
        vals = out.tolist()
        for r in range(20):
            row = vals[r * 7:(r + 1) * 7]
            assert abs(sum(row) - 1.0) < 1e-6
            for j in range(7):
                if not mask[r * 7 + j]:
                    assert row[j] == 0.0

    def test_fully_masked_row_rejected(self):
        with pytest.raises(ValueError, match="no valid attention targets"):
            masked_softmax(Tensor.zeros((1, 3)), bytearray([0, 0, 0]))


class TestDense:
    def test_identity_weights(self):
        x = Tensor.from_values([[1.0, 2.0], [3.0, 4.0]])
        w = Tensor.from_values([[1.0, 0.0], [0.0, 1.0]])
        out = dense(x, w, Tensor.zeros((2,)))
        assert out.tolist() == x.tolist()

    def test_bias_added(self):
        x = Tensor.from_values([[1.0, 2.0]])
        w = Tensor.from_values([[1.0, 0.0], [0.0, 1.0]])
        out = dense(x, w, Tensor.from_values([1.0, 1.0]))
        assert out.tolist() == [2.0, 3.0]

    def test_matches_triple_loop_oracle(self):
        rng = RngState(14)
        x = rand_tensor((3, 4), rng)
        w = rand_tensor((4, 2), rng)
        b = rand_tensor((2,), rng)
        out = dense(x, w, b)
        xv, wv, bv = x.tolist(), w.tolist(), b.tolist()
        for i in range(3):
            for j in range(2):
                want = bv[j] + sum(xv[i * 4 + l] * wv[l * 2 + j] for l in range(4))
                assert abs(out.tolist()[i * 2 + j] - want) < 1e-7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dense(Tensor.zeros((2, 3)), Tensor.zeros((4, 2)))


class TestDropout:
    def test_eval_mode_is_identity(self):
        rng = RngState(15)
        x = rand_tensor((5, 5), rng)
        out = dropout(x, 0.9, training=False, rng=rng)
        assert out.data is x.data

    def test_p_zero_is_identity(self):
        rng = RngState(16)
        x = rand_tensor((5, 5), rng)
        out = dropout(x, 0.0, training=True, rng=rng)
        assert out.data is x.data

    def test_monte_carlo_mean_preserved(self):
        n = 100_000
        x = Tensor.full((n,), 1.0)
        out = dropout(x, 0.5, training=True, rng=RngState(17))
        mean = sum(out.tolist()) / n
        assert 0.98 <= mean <= 1.02

    def test_p_at_least_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor.zeros((2,)), 1.0, training=True, rng=RngState(0))

    def test_survivors_scaled(self):
        x = Tensor.full((1000,), 1.0)
        out = dropout(x, 0.25, training=True, rng=RngState(18))
        assert set(round(v, 6) for v in out.tolist()) <= {0.0, round(1 / 0.75, 6)}


class TestElementwise:
    def test_add_mul_sub(self):
        a = Tensor.from_values([1.0, 2.0])
        b = Tensor.from_values([3.0, 5.0])
        assert ops.add(a, b).tolist() == [4.0, 7.0]
        assert ops.sub(a, b).tolist() == [-2.0, -3.0]
        assert ops.mul(a, b).tolist() == [3.0, 10.0]
        assert ops.one_minus(a).tolist() == [0.0, -1.0]

    def test_concat_and_slice(self):
        a = Tensor.from_values([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor.from_values([[5.0], [6.0]])
        c = ops.concat_lastdim(a, b)
        assert c.shape == (2, 3)
        assert c.tolist() == [1.0, 2.0, 5.0, 3.0, 4.0, 6.0]
        assert ops.slice_lastdim(c, 2, 1).tolist() == [5.0, 6.0]

    def test_stack_rows(self):
        a = Tensor.from_values([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor.from_values([[5.0, 6.0], [7.0, 8.0]])
        s = ops.stack_rows([a, b])
        assert s.shape == (2, 2, 2)
        assert s.tolist() == [1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]

    def test_masked_mean_mid(self):
        x = Tensor.from_values([[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]])
        out = ops.masked_mean_mid(x, bytearray([1, 1, 0]))
        assert out.tolist() == [2.0, 3.0]

    def test_masked_mean_mid_empty_row_is_zero(self):
        x = Tensor.from_values([[[1.0, 2.0]]])
        assert ops.masked_mean_mid(x, bytearray([0])).tolist() == [0.0, 0.0]
