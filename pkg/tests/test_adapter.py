import math
from array import array

import pytest

from roundrec.adapter import (
    AdapterToggles,
    adapt_item_sequence,
    adapt_user_repr,
    attend_context,
    filter_context,
    init_item_adapter,
    init_user_adapter,
)
from roundrec.backbone import init_embedding_table
from roundrec.compute import RngState, Tensor, grad_check, ops
from roundrec.compute.recurrent import gru_sequence_batched

from helpers import max_abs_diff, rand_tensor


def ones_mask(n):
    return array("b", b"\x01" * n)


class TestFilterContext:
    def test_identity_filter_equals_normalized_input(self):
        rng = RngState(110)
        params = init_item_adapter(4, 3, dropout=0.0, rng=rng)
        x = rand_tensor((2, 4, 3), rng)
        out = filter_context(x, ones_mask(8), params.lft)
        # Pass-through filter doubles the residual stream; normalization is
        # scale-invariant so this equals normalizing the input directly.
        ref = ops.layer_norm(x, params.lft.ln_gamma, params.lft.ln_beta)
        assert max_abs_diff(out, ref) < 1e-5

    def test_zero_filter_reduces_to_layer_norm(self):
        rng = RngState(111)
        params = init_item_adapter(4, 3, dropout=0.0, rng=rng)
        for i in range(params.lft.w_re.size):
            params.lft.w_re.data[i] = 0.0
        x = rand_tensor((1, 4, 3), rng)
        out = filter_context(x, ones_mask(4), params.lft)
        ref = ops.layer_norm(x, params.lft.ln_gamma, params.lft.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_random_filter_matches_dft_oracle_pre_norm(self):
        import cmath
        rng = RngState(112)
        C, d = 8, 4
        params = init_item_adapter(C, d, dropout=0.0, rng=rng)
        lft = params.lft
        for i in range(lft.w_re.size):
            lft.w_re.data[i] = rng.uniform(-1, 1)
            lft.w_im.data[i] = rng.uniform(-1, 1)
        x = rand_tensor((1, C, d), rng)
        from roundrec.backbone import spectral_filter
        got = spectral_filter(x, lft.w_re, lft.w_im)
        xs = x.tolist()
        H = C // 2 + 1
        for j in range(d):
            col = [xs[c * d + j] for c in range(C)]
            spec = [sum(col[n] * cmath.exp(-2j * cmath.pi * k * n / C)
                        for n in range(C)) for k in range(C)]
            for k in range(H):
                w = complex(lft.w_re.tolist()[k * d + j], lft.w_im.tolist()[k * d + j])
                spec[k] = spec[k] * w
            for k in range(H, C):
                spec[k] = spec[C - k].conjugate()
            back = [sum(spec[k] * cmath.exp(2j * cmath.pi * k * n / C)
                        for k in range(C)).real / C for n in range(C)]
            for c in range(C):
                assert abs(got.tolist()[c * d + j] - back[c]) < 1e-5

    def test_capacity_mismatch_rejected(self):
        params = init_item_adapter(8, 3, rng=RngState(113))
        with pytest.raises(ValueError, match="capacity"):
            filter_context(Tensor.zeros((1, 4, 3)), ones_mask(4), params.lft)


class TestAttendContext:
    def test_single_slot_passthrough(self):
        rng = RngState(114)
        params = init_item_adapter(2, 3, dropout=0.0, rng=rng).cat
        E = rand_tensor((1, 4, 3), rng)
        H = rand_tensor((1, 2, 3), rng)
        mask = array("b", [1, 0])
        out = attend_context(E, H, mask, params)
        slot = H.tolist()[:3]
        mixed = [[E.tolist()[i * 3 + j] + slot[j] for j in range(3)] for i in range(4)]
        ref = ops.layer_norm(Tensor.from_values([mixed]), params.ln_gamma,
                             params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_equal_scores_average_slots(self):
        params = init_item_adapter(2, 2, dropout=0.0, rng=RngState(115)).cat
        E = Tensor.zeros((1, 3, 2))  # zero queries -> all scores equal
        H = Tensor.from_values([[[1.0, 3.0], [3.0, 5.0]]])
        out = attend_context(E, H, ones_mask(2), params)
        mean = [[2.0, 4.0]] * 3
        ref = ops.layer_norm(Tensor.from_values([mean]), params.ln_gamma,
                             params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_matches_softmax_weighted_sum_oracle(self):
        rng = RngState(116)
        d = 4
        params = init_item_adapter(4, d, dropout=0.0, rng=rng).cat
        E = rand_tensor((1, 2, d), rng)
        H = rand_tensor((1, 3, d), rng)
        out = attend_context(E, H, array("b", [1, 1, 1]), params)
        ev, hv = E.tolist(), H.tolist()
        mixed_rows = []
        for i in range(2):
            scores = [sum(ev[i * d + j] * hv[c * d + j] for j in range(d)) / math.sqrt(d)
                      for c in range(3)]
            mx = max(scores)
            ws = [math.exp(s - mx) for s in scores]
            tot = sum(ws)
            ws = [w / tot for w in ws]
            mixed_rows.append([ev[i * d + j]
                               + sum(ws[c] * hv[c * d + j] for c in range(3))
                               for j in range(d)])
        ref = ops.layer_norm(Tensor.from_values([mixed_rows]), params.ln_gamma,
                             params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-5

    def test_attention_weights_sum_to_one(self):
        rng = RngState(117)
        E = rand_tensor((2, 3, 4), rng)
        H = rand_tensor((2, 5, 4), rng)
        mask = array("b", [1, 1, 0, 1, 0] + [0, 1, 1, 1, 1])
        scores = ops.scale(ops.matmul(E, H, trans_b=True), 0.5)
        expanded = array("b", bytes(2 * 3 * 5))
        for b in range(2):
            for i in range(3):
                expanded[(b * 3 + i) * 5:(b * 3 + i + 1) * 5] = mask[b * 5:(b + 1) * 5]
        w = ops.masked_softmax(scores, expanded)
        vals = w.tolist()
        for r in range(6):
            assert abs(sum(vals[r * 5:(r + 1) * 5]) - 1.0) < 1e-6

    def test_fully_masked_context_rejected(self):
        params = init_item_adapter(2, 2, dropout=0.0, rng=RngState(118)).cat
        with pytest.raises(ValueError, match="no valid attention targets"):
            attend_context(Tensor.zeros((1, 2, 2)), Tensor.zeros((1, 2, 2)),
                           array("b", [0, 0]), params)


class TestItemAdapter:
    def _setup(self, seed=119, C=4, d=3):
        rng = RngState(seed)
        table = init_embedding_table(9, d, rng)
        params = init_item_adapter(C, d, dropout=0.0, rng=rng)
        E = rand_tensor((2, 5, d), rng)
        return table, params, E

    def test_empty_context_is_bit_identical(self):
        table, params, E = self._setup()
        out = adapt_item_sequence(E, array("q", bytes(0)), array("b", bytes(0)),
                                  0, table, params, AdapterToggles())
        assert out is E

    def test_disabled_adapter_is_identity(self):
        table, params, E = self._setup()
        ids = array("q", [1, 2, 0, 0, 3, 4, 0, 0])
        mask = array("b", [1, 1, 0, 0, 1, 1, 0, 0])
        out = adapt_item_sequence(E, ids, mask, 2, table, params,
                                  AdapterToggles(enable_ira=False))
        assert out is E

    def test_full_composition_matches_stepwise_oracle(self):
        table, params, E = self._setup()
        ids = array("q", [1, 2, 0, 0, 3, 4, 0, 0])
        mask = array("b", [1, 1, 0, 0, 1, 1, 0, 0])
        out = adapt_item_sequence(E, ids, mask, 2, table, params, AdapterToggles())
        E_ctx = ops.embedding(ids, (2, 4), table)
        H_ctx = filter_context(E_ctx, mask, params.lft)
        ref = attend_context(E, H_ctx, mask, params.cat)
        assert out.tolist() == ref.tolist()

    def test_without_filter_uses_raw_context(self):
        table, params, E = self._setup()
        ids = array("q", [1, 2, 0, 0, 3, 4, 0, 0])
        mask = array("b", [1, 1, 0, 0, 1, 1, 0, 0])
        out = adapt_item_sequence(E, ids, mask, 2, table, params,
                                  AdapterToggles(enable_lft=False))
        ref = attend_context(E, ops.embedding(ids, (2, 4), table), mask, params.cat)
        assert out.tolist() == ref.tolist()

    def test_without_attention_adds_context_mean(self):
        table, params, E = self._setup()
        ids = array("q", [1, 2, 0, 0, 3, 4, 0, 0])
        mask = array("b", [1, 1, 0, 0, 1, 1, 0, 0])
        out = adapt_item_sequence(E, ids, mask, 2, table, params,
                                  AdapterToggles(enable_cat=False))
        E_ctx = ops.embedding(ids, (2, 4), table)
        H_ctx = filter_context(E_ctx, mask, params.lft)
        mean = ops.masked_mean_mid(H_ctx, mask)
        ref = ops.layer_norm(ops.add(E, ops.stack_rows([mean] * 5)),
                             params.cat.ln_gamma, params.cat.ln_beta)
        assert out.tolist() == ref.tolist()


class TestUserAdapter:
    def test_zero_fusion_head_reduces_to_layer_norm(self):
        rng = RngState(120)
        params = init_user_adapter(4, dropout=0.0, rng=rng)
        for i in range(params.w2.size):
            params.w2.data[i] = 0.0
        F = rand_tensor((2, 4), rng)
        stack = [rand_tensor((2, 4), rng)]
        out = adapt_user_repr(F, stack, params, AdapterToggles())
        ref = ops.layer_norm(F, params.ln_gamma, params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_empty_stack_uses_zero_context(self):
        rng = RngState(121)
        params = init_user_adapter(3, dropout=0.0, rng=rng)
        F = rand_tensor((2, 3), rng)
        out = adapt_user_repr(F, [], params, AdapterToggles())
        joined = ops.concat_lastdim(Tensor.zeros((2, 3)), F)
        fused = ops.dense(ops.relu(ops.dense(joined, params.w1, params.b1)),
                          params.w2, params.b2)
        ref = ops.layer_norm(ops.add(F, fused), params.ln_gamma, params.ln_beta)
        assert out.tolist() == ref.tolist()

    def test_disabled_is_identity(self):
        rng = RngState(122)
        params = init_user_adapter(3, dropout=0.0, rng=rng)
        F = rand_tensor((1, 3), rng)
        out = adapt_user_repr(F, [rand_tensor((1, 3), rng)], params,
                              AdapterToggles(enable_ura=False))
        assert out is F

    def test_stack_of_two_matches_stepwise_oracle(self):
        rng = RngState(123)
        params = init_user_adapter(4, dropout=0.0, rng=rng)
        F = rand_tensor((2, 4), rng)
        stack = [rand_tensor((2, 4), rng), rand_tensor((2, 4), rng)]
        out = adapt_user_repr(F, stack, params, AdapterToggles())

        stacked = ops.stack_rows(stack)
        _, ctx = gru_sequence_batched(stacked, Tensor.zeros((2, 4)), params.gru)
        joined = ops.concat_lastdim(ctx, F)
        fused = ops.dense(ops.relu(ops.dense(joined, params.w1, params.b1)),
                          params.w2, params.b2)
        ref = ops.layer_norm(ops.add(F, fused), params.ln_gamma, params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_without_gru_uses_stack_mean(self):
        rng = RngState(124)
        params = init_user_adapter(3, dropout=0.0, rng=rng)
        F = rand_tensor((1, 3), rng)
        a = Tensor.from_values([[1.0, 2.0, 3.0]])
        b = Tensor.from_values([[3.0, 4.0, 5.0]])
        out = adapt_user_repr(F, [a, b], params,
                              AdapterToggles(enable_ura_gru=False))
        joined = ops.concat_lastdim(Tensor.from_values([[2.0, 3.0, 4.0]]), F)
        fused = ops.dense(ops.relu(ops.dense(joined, params.w1, params.b1)),
                          params.w2, params.b2)
        ref = ops.layer_norm(ops.add(F, fused), params.ln_gamma, params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6

    def test_without_mlp_adds_context_directly(self):
        rng = RngState(125)
        params = init_user_adapter(3, dropout=0.0, rng=rng)
        F = rand_tensor((1, 3), rng)
        stack = [rand_tensor((1, 3), rng)]
        out = adapt_user_repr(F, stack, params, AdapterToggles(enable_ura_mlp=False))
        stacked = ops.stack_rows(stack)
        _, ctx = gru_sequence_batched(stacked, Tensor.zeros((1, 3)), params.gru)
        ref = ops.layer_norm(ops.add(F, ctx), params.ln_gamma, params.ln_beta)
        assert max_abs_diff(out, ref) < 1e-6


class TestAdapterGradients:
    def test_item_adapter_grad_check(self):
        rng = RngState(126)
        d = 4
        table = init_embedding_table(6, d, rng).astype("d")
        table.requires_grad = True
        params = init_item_adapter(2, d, dropout=0.0, rng=rng, dtype="d")
        # Perturb the filter off its identity start so grads are generic.
        for i in range(params.lft.w_re.size):
            params.lft.w_re.data[i] += rng.uniform(-0.3, 0.3)
            params.lft.w_im.data[i] += rng.uniform(-0.3, 0.3)
        plist = [table] + [t for _, t in params.named()]
        w = rand_tensor((2, 3, d), RngState(127), dtype="d")
        ids = array("q", [1, 2, 3, 4])
        mask = array("b", [1, 1, 1, 1])

        def build(ps):
            E = ops.embedding(array("q", [5, 1, 2, 3, 4, 5]), (2, 3), ps[0])
            out = adapt_item_sequence(E, ids, mask, 2, ps[0], params,
                                      AdapterToggles())
            return ops.sum_all(ops.mul(out, w))

        assert grad_check(build, plist, h=1e-3) < 1e-4

    def test_user_adapter_grad_check(self):
        rng = RngState(128)
        d = 4
        params = init_user_adapter(d, dropout=0.0, rng=rng, dtype="d")
        F = rand_tensor((2, d), rng, dtype="d", requires_grad=True)
        s1 = rand_tensor((2, d), rng, dtype="d", requires_grad=True)
        s2 = rand_tensor((2, d), rng, dtype="d", requires_grad=True)
        plist = [F, s1, s2] + [t for _, t in params.named()]
        w = rand_tensor((2, d), RngState(129), dtype="d")

        def build(ps):
            out = adapt_user_repr(ps[0], [ps[1], ps[2]], params, AdapterToggles())
            return ops.sum_all(ops.mul(out, w))

        assert grad_check(build, plist, h=1e-3) < 1e-4
