from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from recam import tensor as T
from recam.tensor import ContractError, DimensionError, Tape, Tensor, VocabularyError

from gradcheck import check_gradients
from op_cases import OP_CASES


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[5, 6], [7, 8]]))
        np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])

    def test_row_times_column(self):
        assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)

    @given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_triple_loop_property(self, m, k, n, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(-1, 1, (m, k)), rng.uniform(-1, 1, (k, n))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_recorded_only_with_grad(self):
        with Tape() as tape:
            T.matmul(Tensor(np.eye(2)), Tensor(np.eye(2)))
            assert len(tape) == 0
            T.matmul(Tensor(np.eye(2), grad_enabled=True), Tensor(np.eye(2)))
            assert len(tape) == 1


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor(np.zeros(5))).data, [0.2] * 5, atol=1e-15)

    def test_large_logits_stay_finite(self):
        p = T.softmax_rows(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0) and p[1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_high_precision_oracle(self):
        getcontext().prec = 50
        exps = [Decimal(v).exp() for v in (1, 2, 3)]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
        np.testing.assert_allclose(T.softmax_rows(Tensor([1.0, 2.0, 3.0])).data, expected, rtol=0, atol=1e-12)

    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                      elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=60, deadline=None)
    def test_rows_are_distributions(self, x):
        p = T.softmax_rows(Tensor(x)).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


class TestLayerNorm:
    def test_constant_slice(self):
        out = T.layer_norm(Tensor([5.0, 5, 5, 5]), Tensor(np.ones(4)), Tensor(np.zeros(4)), 1e-5)
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_already_normalized(self):
        out = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), 1e-14)
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-9)

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(7)
        x, g, b = rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)
        expected = np.empty_like(x)
        for r, row in enumerate(x):
            mu = sum(row) / len(row)
            var = sum((v - mu) ** 2 for v in row) / len(row)
            expected[r] = [(v - mu) / (var + 1e-5) ** 0.5 * g[i] + b[i] for i, v in enumerate(row)]
        out = T.layer_norm(Tensor(x), Tensor(g), Tensor(b), 1e-5)
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-9)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            T.layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)), grad_enabled=True)
        with Tape() as tape:
            loss = T.sum(x)
        np.testing.assert_array_equal(T.backward(loss, tape)[x], np.ones((2, 3, 4)))

    def test_dot_gives_vector(self):
        v = np.array([0.5, -2.0, 3.0])
        x = Tensor(np.array([1.0, 2.0, 3.0]), grad_enabled=True)
        with Tape() as tape:
            loss = T.sum(T.mul(Tensor(v), x))
        np.testing.assert_array_equal(T.backward(loss, tape)[x], v)

    def test_non_participating_leaf_gets_zero(self):
        x = Tensor(np.ones(3), grad_enabled=True)
        unused = Tensor(np.ones((2, 2)), grad_enabled=True)
        with Tape() as tape:
            loss = T.sum(x)
        grads = T.backward(loss, tape, [x, unused])
        np.testing.assert_array_equal(grads[unused], np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), grad_enabled=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ContractError):
            T.backward(y, tape)

    def test_tape_is_topologically_ordered(self):
        x = Tensor(np.ones((2, 2)), grad_enabled=True)
        with Tape() as tape:
            y = T.matmul(x, x)
            T.sum(T.softmax_rows(y) * y)
        seen = {id(x)}
        for node in tape.nodes:
            assert all(id(p) in seen or not p.grad_enabled for p in node._parents)
            seen.add(id(node))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(4, 4)), grad_enabled=True)
        w = Tensor(rng.normal(size=(4, 4)), grad_enabled=True)

        def run():
            with Tape() as tape:
                loss = T.sum(T.softmax_rows(T.matmul(x, w)) * T.gelu(x))
            g = T.backward(loss, tape)
            return g[x].tobytes(), g[w].tobytes()

        assert run() == run()

    @pytest.mark.parametrize("name", sorted(OP_CASES))
    def test_finite_differences(self, name):
        for seed in range(3):
            fn, inputs = OP_CASES[name](np.random.default_rng(seed))
            assert check_gradients(fn, inputs, seed=seed) < 1e-4


class TestEmbedding:
    def test_repetition(self):
        table = Tensor(np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(T.embedding_gather(table, [0, 0]).data, [[0, 1], [0, 1]])

    def test_empty(self):
        assert T.embedding_gather(Tensor(np.ones((3, 2))), []).shape == (0, 2)

    def test_gradient_counts_occurrences(self):
        ids = [2, 0, 2, 2, 4]
        table = Tensor(np.random.default_rng(0).normal(size=(5, 3)), grad_enabled=True)
        with Tape() as tape:
            loss = T.sum(T.embedding_gather(table, ids))
        grad = T.backward(loss, tape)[table]
        counts = [ids.count(r) for r in range(5)]
        np.testing.assert_array_equal(grad, np.repeat(np.array(counts, float)[:, None], 3, axis=1))

    def test_out_of_range_id(self):
        with pytest.raises(VocabularyError) as err:
            T.embedding_gather(Tensor(np.ones((3, 2))), [1, 3])
        assert err.value.token_id == 3


def test_finite_outputs_on_finite_inputs():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-50, 50, (4, 6)))
    out = T.layer_norm(T.gelu(T.softmax_rows(x) * 1e3), Tensor(np.ones(6)), Tensor(np.zeros(6)))
    assert np.all(np.isfinite(out.data))
    assert out.data.size == np.prod(out.shape)
