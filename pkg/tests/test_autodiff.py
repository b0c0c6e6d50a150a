"""Tensor/graph core: op semantics, adjoints vs finite differences, and the
backward-pass contracts (determinism, zero gradients off the loss path)."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import finite_diff, rel_err
from nextact import autodiff as ad
from nextact.errors import DomainError, GraphError, NumericError, ShapeError

FD_TOL = 1e-6


class TestMatmul:
    def test_identity(self):
        g = ad.Graph()
        a = g.tensor(np.eye(2))
        b = g.tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).values, [[1.0, 2.0], [3.0, 4.0]])

    def test_unit_selector_row(self):
        g = ad.Graph()
        out = ad.matmul(g.tensor([[1.0, 0.0]]), g.tensor([[5.0], [7.0]]))
        np.testing.assert_array_equal(out.values, [[5.0]])

    def test_shape_mismatch_names_both_shapes(self):
        g = ad.Graph()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(g.tensor(np.ones((2, 3))), g.tensor(np.ones((2, 2))))

    def test_gradient_matches_finite_differences(self, rng):
        av = rng.uniform(-2, 2, (3, 4))
        bv = rng.uniform(-2, 2, (4, 2))

        def loss():
            g = ad.Graph()
            return ad.total(ad.matmul(g.tensor(av), g.tensor(bv))).item()

        g = ad.Graph()
        a, b = g.tensor(av), g.tensor(bv)
        g.backward(ad.total(ad.matmul(a, b)))
        assert rel_err(a.grad, finite_diff(loss, av)) < FD_TOL
        assert rel_err(b.grad, finite_diff(loss, bv)) < FD_TOL

    @pytest.mark.parametrize("shapes", [((4,), (4, 3)), ((3, 4), (4,))])
    def test_vector_matrix_gradients(self, rng, shapes):
        av = rng.uniform(-2, 2, shapes[0])
        bv = rng.uniform(-2, 2, shapes[1])

        def loss():
            g = ad.Graph()
            return ad.total(ad.matmul(g.tensor(av), g.tensor(bv))).item()

        g = ad.Graph()
        a, b = g.tensor(av), g.tensor(bv)
        g.backward(ad.total(ad.matmul(a, b)))
        assert rel_err(a.grad, finite_diff(loss, av)) < FD_TOL
        assert rel_err(b.grad, finite_diff(loss, bv)) < FD_TOL


class TestElementwise:
    def test_sigmoid_at_zero(self):
        g = ad.Graph()
        assert ad.sigmoid(g.tensor([0.0])).values[0] == 0.5

    def test_tanh_at_zero(self):
        g = ad.Graph()
        assert ad.tanh(g.tensor([0.0])).values[0] == 0.0

    def test_log_exp_inverse(self):
        g = ad.Graph()
        out = ad.log(ad.exp(g.tensor([1.0])))
        assert abs(out.values[0] - 1.0) < 1e-12

    def test_log_rejects_nonpositive_with_index(self):
        g = ad.Graph()
        with pytest.raises(DomainError, match="index 2"):
            ad.log(g.tensor([1.0, 2.0, -3.0]))

    def test_binary_shape_mismatch(self):
        g = ad.Graph()
        with pytest.raises(ShapeError):
            ad.add(g.tensor([1.0]), g.tensor([1.0, 2.0]))

    def test_mixed_graphs_rejected(self):
        g1, g2 = ad.Graph(), ad.Graph()
        with pytest.raises(GraphError):
            ad.add(g1.tensor([1.0]), g2.tensor([1.0]))

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "sigmoid", "tanh", "exp", "scale"])
    def test_gradients_match_finite_differences(self, rng, op):
        av = rng.uniform(-2, 2, 5)
        bv = rng.uniform(-2, 2, 5)

        def build(g):
            a = g.tensor(av)
            if op in ("add", "sub", "mul"):
                return a, getattr(ad, op)(a, g.tensor(bv))
            if op == "scale":
                return a, ad.scale(a, 1.7)
            return a, getattr(ad, op)(a)

        def loss():
            g = ad.Graph()
            return ad.total(build(g)[1]).item()

        g = ad.Graph()
        a, out = build(g)
        g.backward(ad.total(out))
        assert rel_err(a.grad, finite_diff(loss, av)) < FD_TOL

    def test_log_gradient(self, rng):
        av = rng.uniform(0.1, 2, 5)

        def loss():
            g = ad.Graph()
            return ad.total(ad.log(g.tensor(av))).item()

        g = ad.Graph()
        a = g.tensor(av)
        g.backward(ad.total(ad.log(a)))
        assert rel_err(a.grad, finite_diff(loss, av)) < FD_TOL


class TestConcat:
    def test_basic(self):
        g = ad.Graph()
        out = ad.concat(g.tensor([1.0, 2.0]), g.tensor([3.0]))
        np.testing.assert_array_equal(out.values, [1.0, 2.0, 3.0])

    def test_empty_left_operand(self):
        g = ad.Graph()
        out = ad.concat(g.tensor(np.zeros(0)), g.tensor([5.0]))
        np.testing.assert_array_equal(out.values, [5.0])

    def test_adjoint_partition(self):
        g = ad.Graph()
        a, b = g.tensor([1.0, 2.0]), g.tensor([3.0])
        out = ad.concat(a, b)
        # loss = [g1,g2,g3] . out with g = (2, 5, 7)
        loss = ad.dot(g.tensor([2.0, 5.0, 7.0]), out)
        g.backward(loss)
        np.testing.assert_array_equal(a.grad, [2.0, 5.0])
        np.testing.assert_array_equal(b.grad, [7.0])

    def test_rank_check(self):
        g = ad.Graph()
        with pytest.raises(ShapeError):
            ad.concat(g.tensor(np.ones((2, 2))), g.tensor([1.0]))


class TestDot:
    def test_self_dot(self):
        g = ad.Graph()
        v = g.tensor([1.0, 2.0, 3.0])
        assert ad.dot(v, v).item() == 14.0

    def test_orthogonal(self):
        g = ad.Graph()
        assert ad.dot(g.tensor([1.0, 0.0]), g.tensor([0.0, 1.0])).item() == 0.0

    def test_length_mismatch(self):
        g = ad.Graph()
        with pytest.raises(ShapeError):
            ad.dot(g.tensor([1.0]), g.tensor([1.0, 2.0]))

    def test_gradient_matches_finite_differences(self, rng):
        av = rng.uniform(-2, 2, 8)
        bv = rng.uniform(-2, 2, 8)

        def loss():
            g = ad.Graph()
            return ad.dot(g.tensor(av), g.tensor(bv)).item()

        g = ad.Graph()
        a, b = g.tensor(av), g.tensor(bv)
        g.backward(ad.dot(a, b))
        assert rel_err(a.grad, finite_diff(loss, av)) < FD_TOL
        assert rel_err(b.grad, finite_diff(loss, bv)) < FD_TOL


class TestSoftmax:
    def test_symmetry(self):
        g = ad.Graph()
        out = ad.softmax(g.tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.values, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_large_logits_stable(self):
        g = ad.Graph()
        out = ad.softmax(g.tensor([1000.0, 0.0])).values
        assert np.isfinite(out).all()
        assert out[0] > 1.0 - 1e-12 and out[1] < 1e-12

    def test_two_class_value(self):
        g = ad.Graph()
        out = ad.softmax(g.tensor([1.0, 0.0])).values
        e = math.exp(1.0)
        np.testing.assert_allclose(out, [e / (e + 1), 1 / (e + 1)], rtol=1e-12)
        assert abs(out[0] - 0.73106) < 5e-6 and abs(out[1] - 0.26894) < 5e-6

    def test_nan_rejected(self):
        g = ad.Graph()
        with pytest.raises(NumericError):
            ad.softmax(g.tensor([1.0, float("nan")]))

    def test_gradient_matches_finite_differences(self, rng):
        zv = rng.uniform(-2, 2, 6)
        w = rng.uniform(-1, 1, 6)  # random downstream weighting

        def loss():
            g = ad.Graph()
            return ad.dot(ad.softmax(g.tensor(zv)), g.tensor(w)).item()

        g = ad.Graph()
        z = g.tensor(zv)
        g.backward(ad.dot(ad.softmax(z), g.tensor(w)))
        assert rel_err(z.grad, finite_diff(loss, zv)) < FD_TOL

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=12),
        st.floats(min_value=-100, max_value=100),
    )
    def test_sums_to_one_and_translation_invariant(self, zs, c):
        g = ad.Graph()
        y1 = ad.softmax(g.tensor(zs)).values
        y2 = ad.softmax(g.tensor(np.asarray(zs) + c)).values
        assert abs(y1.sum() - 1.0) < 1e-9
        np.testing.assert_allclose(y1, y2, rtol=0, atol=1e-12)


class TestStackReductions:
    def test_mean(self):
        g = ad.Graph()
        out = ad.mean_stack([g.tensor([1.0, 1.0]), g.tensor([3.0, 3.0])])
        np.testing.assert_array_equal(out.values, [2.0, 2.0])

    def test_max_and_tie_goes_to_first(self):
        g = ad.Graph()
        a, b = g.tensor([1.0, 5.0]), g.tensor([3.0, 5.0])
        out = ad.max_stack([a, b])
        np.testing.assert_array_equal(out.values, [3.0, 5.0])
        g.backward(ad.total(out))
        np.testing.assert_array_equal(a.grad, [0.0, 1.0])
        np.testing.assert_array_equal(b.grad, [1.0, 0.0])

    def test_mean_gradient(self, rng):
        vals = [rng.uniform(-2, 2, 4) for _ in range(3)]

        def loss():
            g = ad.Graph()
            return ad.total(ad.mean_stack([g.tensor(v) for v in vals])).item()

        g = ad.Graph()
        ts = [g.tensor(v) for v in vals]
        g.backward(ad.total(ad.mean_stack(ts)))
        for t, v in zip(ts, vals):
            assert rel_err(t.grad, finite_diff(loss, v)) < FD_TOL


class TestBackward:
    def test_quadratic(self):
        g = ad.Graph()
        w = g.tensor([1.0, 2.0])
        g.backward(ad.dot(w, w))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_sigmoid_derivative_at_zero(self):
        g = ad.Graph()
        w = g.tensor([0.0])
        loss = ad.dot(ad.sigmoid(w), g.tensor([1.0]))
        g.backward(loss)
        np.testing.assert_allclose(w.grad, [0.25], rtol=1e-15)

    def test_non_scalar_root_rejected(self):
        g = ad.Graph()
        with pytest.raises(ShapeError):
            g.backward(g.tensor([1.0, 2.0]))

    def test_deterministic_bitwise(self, rng):
        g = ad.Graph()
        a = g.tensor(rng.uniform(-2, 2, (3, 3)))
        b = g.tensor(rng.uniform(-2, 2, (3, 3)))
        loss = ad.total(ad.mul(ad.matmul(a, b), ad.add(a, b)))
        g.backward(loss)
        first = (a.grad.copy(), b.grad.copy())
        g.backward(loss)
        np.testing.assert_array_equal(a.grad, first[0])
        np.testing.assert_array_equal(b.grad, first[1])

    def test_unreachable_leaf_gets_exact_zero(self):
        g = ad.Graph()
        used = g.tensor([1.0, 2.0])
        bystander = g.tensor([5.0, 5.0])
        extra = ad.exp(bystander)  # on the tape but not feeding the loss
        g.backward(ad.dot(used, used))
        np.testing.assert_array_equal(bystander.grad, [0.0, 0.0])
        np.testing.assert_array_equal(extra.grad, [0.0, 0.0])

    def test_reuse_accumulates(self):
        # y = x.x + sum(x): dy/dx = 2x + 1
        g = ad.Graph()
        x = g.tensor([1.0, -2.0])
        g.backward(ad.add(ad.dot(x, x), ad.total(x)))
        np.testing.assert_array_equal(x.grad, [3.0, -3.0])

    def test_records_are_topologically_ordered(self):
        g = ad.Graph()
        a, b = g.tensor([1.0]), g.tensor([2.0])
        c = ad.add(a, b)
        d = ad.mul(c, a)
        for rec in g.records:
            assert all(i < rec.output_id for i in rec.input_ids)
        assert g.records[-1].output_id == d.node_id
