import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_pesa, softmax_row
from toy import model_gradient_errors, toy_setup
from vsformer.model import (
    MODES,
    Branch,
    BranchInput,
    EncoderLayer,
    ModelSpec,
    VSFormer,
    bit_width,
    decision_forward,
    embed_tokens,
    pesa_attention,
    prior_matrix,
    tsi_encode,
    tsi_width,
    variable_bits,
)
from vsformer.numerics import Parameter, Tensor


class TestTsi:
    def test_three_variables(self):
        np.testing.assert_array_equal(variable_bits(2, 3), [1, 0])

    def test_full_record(self):
        rec = tsi_encode(5, 10, 20, 1.5, V=8, T=100)
        np.testing.assert_allclose(rec, [1, 0, 1, 0.10, 0.20, 1.5])

    def test_single_variable(self):
        assert bit_width(1) == 1
        np.testing.assert_array_equal(variable_bits(0, 1), [0])
        assert tsi_width(1) == 4

    def test_kind_code(self):
        rec = tsi_encode(1, 0, 5, 2.0, V=2, T=10, kind=2)
        np.testing.assert_allclose(rec, [1, 0.0, 0.5, 2.0, 0, 0, 1])
        assert tsi_width(2, with_kind=True) == 7

    def test_variable_out_of_range(self):
        with pytest.raises(ValueError):
            tsi_encode(3, 0, 1, 1.0, V=3, T=10)

    def test_bad_timestamps(self):
        with pytest.raises(ValueError):
            tsi_encode(0, 5, 5, 1.0, V=2, T=10)

    def test_broadcasting(self):
        rec = tsi_encode(np.array([0, 1, 2]), np.array([0, 2, 4]), np.array([2, 4, 6]), np.ones((2, 3)), 3, 6)
        assert rec.shape == (2, 3, 5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 300))
    def test_binary_code_injective(self, V):
        codes = variable_bits(np.arange(V), V)
        assert codes.shape == (V, bit_width(V))
        assert len({tuple(c) for c in codes}) == V
        weights = 2 ** np.arange(codes.shape[1] - 1, -1, -1)
        np.testing.assert_array_equal(codes @ weights, np.arange(V))


class TestEmbed:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.tokens, self.tsi = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))
        self.W_I, self.W_S = rng.normal(size=(4, 8)), rng.normal(size=(8, 3))

    def test_direct_evaluation(self):
        U = embed_tokens(self.tokens, self.tsi, Tensor(self.W_I), Tensor(self.W_S)).data
        expected = np.array([self.tsi[i] @ self.W_I + self.W_S @ self.tokens[i] for i in range(5)])
        np.testing.assert_allclose(U, expected, atol=1e-12)

    def test_zero_tsi_projection(self):
        U = embed_tokens(self.tokens, self.tsi, Tensor(np.zeros((4, 8))), Tensor(self.W_S)).data
        np.testing.assert_allclose(U, self.tokens @ self.W_S.T, atol=1e-14)

    def test_zero_token_projection(self):
        U = embed_tokens(self.tokens, self.tsi, Tensor(self.W_I), Tensor(np.zeros((8, 3)))).data
        np.testing.assert_allclose(U, self.tsi @ self.W_I, atol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            embed_tokens(self.tokens, self.tsi, Tensor(self.W_I), Tensor(np.zeros((8, 2))))


class TestPriorMatrix:
    def test_ones(self):
        np.testing.assert_array_equal(prior_matrix(np.ones(4)), np.ones((4, 4)))

    def test_definition(self):
        np.testing.assert_array_equal(prior_matrix([2.0, 3.0]), [[1, 6], [6, 1]])

    def test_zero_entry(self):
        P = prior_matrix([2.0, 0.0, 3.0])
        np.testing.assert_array_equal(P[1], [0, 1, 0])
        np.testing.assert_array_equal(P[:, 1], [0, 1, 0])

    def test_negative(self):
        with pytest.raises(ValueError):
            prior_matrix([1.0, -0.5])

    def test_batched(self):
        P = prior_matrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(P[1], [[1, 12], [12, 1]])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0, 20), min_size=1, max_size=12))
    def test_symmetric_unit_diagonal(self, p):
        P = prior_matrix(p)
        np.testing.assert_array_equal(P, P.T)
        np.testing.assert_array_equal(np.diag(P), 1.0)


class TestPesa:
    def test_single_token(self):
        out = pesa_attention([[0.3, -1.0]], [[2.0, 0.5]], [[4.0, 5.0, 6.0]], [[7.0]])
        np.testing.assert_allclose(out, [[4.0, 5.0, 6.0]], atol=1e-15)

    def test_unit_prior_reduction(self):
        rng = np.random.default_rng(1)
        Q, K, V = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), rng.normal(size=(4, 3))
        A = np.array([softmax_row(Q[i] @ K.T / math.sqrt(2)) for i in range(4)])
        W = np.array([softmax_row(A[i]) for i in range(4)])
        np.testing.assert_allclose(pesa_attention(Q, K, V, np.ones((4, 4)), 2), W @ V, atol=1e-12)

    def test_four_token_case(self):
        rng = np.random.default_rng(2)
        Q, K, V = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        P = prior_matrix(rng.uniform(0.5, 3.0, size=4))
        ref, _, W = naive_pesa(Q, K, V, P, 3)
        np.testing.assert_allclose(pesa_attention(Q, K, V, P, 3), ref, atol=1e-12)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            pesa_attention(np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)), np.ones((2, 2)))

    def test_huge_prior_concentrates_attention(self):
        rng = np.random.default_rng(3)
        Q, K, V = rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), np.eye(5)
        p = np.ones(5)
        p[3] = 200.0
        out = pesa_attention(Q, K, V, prior_matrix(p))
        # every row except token 3 itself puts nearly all weight on token 3
        assert np.all(np.argmax(np.delete(out, 3, axis=0), axis=1) == 3)


def _spec(**kw):
    base = dict(n_classes=3, n_shape_tokens=6, shape_token_width=4, n_value_tokens=9, tsi_width=5)
    return ModelSpec(**(base | kw))


def _inputs(spec, B=3, seed=0):
    rng = np.random.default_rng(seed)
    s = BranchInput(rng.normal(size=(B, spec.n_shape_tokens, spec.shape_token_width)),
                    rng.uniform(size=(B, spec.n_shape_tokens, spec.tsi_width)),
                    rng.uniform(1, 5, size=(B, spec.n_shape_tokens)))
    v = BranchInput(rng.normal(size=(B, spec.n_value_tokens, 1)),
                    rng.uniform(size=(B, spec.n_value_tokens, spec.tsi_width)),
                    rng.uniform(0, 1, size=(B, spec.n_value_tokens)))
    return s, v


class TestEncoder:
    def test_identical_tokens_give_identical_outputs(self):
        rng = np.random.default_rng(4)
        branch = Branch(5, 3, 4, 8, 16, 8, 1, rng)
        tok = np.broadcast_to(rng.normal(size=3), (2, 5, 3)).copy()
        tsi = np.broadcast_to(rng.normal(size=4), (2, 5, 4)).copy()
        x = Tensor(tok @ branch.W_S.data.T + tsi @ branch.W_I.data)
        out, _ = branch.layers[0](x, np.ones((2, 5, 5)))
        np.testing.assert_allclose(out.data, np.broadcast_to(out.data[:, :1], out.shape), atol=1e-12)
        R, _ = branch(BranchInput(tok, tsi, np.ones((2, 5))))
        np.testing.assert_allclose(R.data, out.data[:, 0], atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        branch = Branch(7, 3, 4, 8, 16, 8, 1, rng).eval()
        layer = branch.layers[0]
        layer.norm1.running_mean[:] = rng.normal(size=8)
        layer.norm2.running_var[:] = rng.uniform(0.5, 2, size=8)
        inp = BranchInput(rng.normal(size=(2, 7, 3)), rng.normal(size=(2, 7, 4)), rng.uniform(0.5, 3, size=(2, 7)))
        perm = rng.permutation(7)
        x = embed_tokens(inp.tokens, inp.tsi, branch.W_I, branch.W_S)
        out, _ = layer(x, prior_matrix(inp.prior))
        out_p, _ = layer(Tensor(x.data[:, perm]), prior_matrix(inp.prior[:, perm]))
        np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-12)
        R, _ = branch(inp)
        R_p, _ = branch(BranchInput(inp.tokens[:, perm], inp.tsi[:, perm], inp.prior[:, perm]))
        np.testing.assert_allclose(R_p.data, R.data, atol=1e-12)

    def test_train_mode_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        layer = EncoderLayer(8, 16, 8, rng)
        x = rng.normal(size=(2, 6, 8))
        P = prior_matrix(rng.uniform(0.5, 2, size=(2, 6)))
        perm = rng.permutation(6)
        out, _ = layer(Tensor(x), P)
        out_p, _ = layer(Tensor(x[:, perm]), P[:, perm][:, :, perm])
        np.testing.assert_allclose(out_p.data, out.data[:, perm], atol=1e-12)

    def test_eval_is_deterministic(self):
        spec = _spec()
        model = VSFormer(spec, seed=1).eval()
        s, v = _inputs(spec)
        a, b = model(s, v), model(s, v)
        assert np.array_equal(a.probs.data, b.probs.data) and np.array_equal(a.lam, b.lam)

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError):
            EncoderLayer(10, 16, 8, np.random.default_rng(0))

    def test_encoder_gradient(self):
        from oracles import central_difference, relative_error
        from vsformer.numerics import backward

        rng = np.random.default_rng(7)
        branch = Branch(4, 3, 4, 8, 16, 8, 1, rng)
        inp = BranchInput(rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 4)), rng.uniform(0.5, 2, size=(2, 4)))

        w = rng.normal(size=(2, 8))  # a plain sum over the batch is flat under batch norm

        def head():
            return (branch(inp)[0] * Tensor(w)).sum()

        branch.zero_grad()
        backward(head())
        for name, p in branch.named_parameters():
            num = central_difference(lambda: head().item(), p.data)
            assert relative_error(p.grad, num) < 1e-4, name


class TestDecision:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.Rs, self.Rv = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
        self.Ws, self.Wv = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
        self.Wl, self.bl = rng.normal(size=(1, 16)), np.array([0.3])

    def _run(self, Rs=None, Rv=None, Ws=None, Wv=None, Wl=None, bl=None):
        args = [Rs, Rv, Ws, Wv, Wl, bl]
        defaults = [self.Rs, self.Rv, self.Ws, self.Wv, self.Wl, self.bl]
        probs, lam = decision_forward(*(Tensor(a if a is not None else d) for a, d in zip(args, defaults)))
        return probs.data, lam.data[:, 0]

    def test_direct_evaluation(self):
        probs, lam = self._run()
        for i in range(3):
            G, H = self.Ws @ self.Rs[i], self.Wv @ self.Rv[i]
            l = 1 / (1 + math.exp(-(self.Wl[0] @ np.concatenate([self.Rs[i], self.Rv[i]]) + self.bl[0])))
            assert lam[i] == pytest.approx(l, abs=1e-12)
            np.testing.assert_allclose(probs[i], softmax_row(l * G + (1 - l) * H), atol=1e-12)

    def test_lambda_to_one(self):
        probs, lam = self._run(Wl=np.zeros((1, 16)), bl=np.array([40.0]))
        for i in range(3):
            np.testing.assert_allclose(probs[i], softmax_row(self.Ws @ self.Rs[i]), atol=1e-6)

    def test_symmetric_branches(self):
        a, _ = self._run(Rv=self.Rs, Wv=self.Ws)
        b, _ = self._run(Rv=self.Rs, Wv=self.Ws, bl=np.array([-5.0]))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            self._run(Ws=np.ones((4, 7)))

    def test_output_is_distribution(self):
        probs, lam = self._run()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((lam > 0) & (lam < 1))


class TestModel:
    @pytest.mark.parametrize("mode", MODES)
    def test_probabilities_and_lambda(self, mode):
        spec = _spec(mode=mode)
        out = VSFormer(spec, seed=2)(*_inputs(spec))
        np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-9)
        if mode == "shape-only":
            np.testing.assert_array_equal(out.lam, 1.0)
        elif mode == "value-only":
            np.testing.assert_array_equal(out.lam, 0.0)
        else:
            assert np.all((out.lam > 0) & (out.lam < 1))

    def test_branch_structure(self):
        assert VSFormer(_spec(mode="shape-only")).branches == ("shape",)
        assert VSFormer(_spec(mode="value-only")).branches == ("value",)
        names = dict(VSFormer(_spec(mode="learnable-pe")).named_parameters())
        assert "shape_branch.W_pos" in names and "shape_branch.W_I" not in names

    def test_value_branch_sizes(self):
        names = dict(VSFormer(_spec(d_model=16, d_ff=32)).named_parameters())
        assert names["value_branch.layers.0.ffn.fc1.weight"].shape == (8, 16)
        assert names["shape_branch.layers.0.ffn.fc1.weight"].shape == (16, 32)

    def test_vanilla_differs_from_full(self):
        spec = _spec()
        s, v = _inputs(spec)
        ones = [BranchInput(x.tokens, x.tsi, np.ones_like(x.prior)) for x in (s, v)]
        full = VSFormer(spec, seed=3).eval()
        vanilla = VSFormer(_spec(mode="vanilla-attn"), seed=3).eval()
        assert not np.allclose(full(*ones).probs.data, vanilla(*ones).probs.data)

    def test_attention_maps_in_eval_mode(self):
        spec = _spec()
        model = VSFormer(spec).eval()
        out = model(*_inputs(spec))
        assert out.attention["shape"].shape == (3, 6) and out.attention["value"].shape == (3, 9)
        np.testing.assert_allclose(out.attention["value"].sum(axis=1), 1.0, atol=1e-12)

    def test_token_count_mismatch(self):
        spec = _spec()
        s, v = _inputs(_spec(n_value_tokens=12))
        with pytest.raises(ValueError, match="expects 9 tokens"):
            VSFormer(spec)(s, v)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            VSFormer(_spec(mode="bogus"))

    def test_seeded_init(self):
        a, b = VSFormer(_spec(), seed=4), VSFormer(_spec(), seed=4)
        for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(p.data, q.data)


class TestModelGradient:
    @pytest.mark.parametrize("mode", ["shape-only", "value-only", "vanilla-attn", "learnable-pe"])
    def test_other_modes(self, mode):
        model, enc, idx = toy_setup(mode)
        errors = model_gradient_errors(model, enc, idx)
        assert max(errors.values()) < 1e-4, errors
