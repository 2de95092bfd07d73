"""Engine tests: primitive forwards, VJPs against finite differences,
backward-pass contracts, gradient checking, and the SGD update rule."""

import numpy as np
import pytest

from oracles import numeric_gradient
from tcpl import autodiff as ad
from tcpl.exceptions import (
    DoubleBackward,
    NonFiniteGradient,
    NonFiniteLoss,
    NonScalarRoot,
    ShapeMismatch,
    UnknownPrimitive,
)


def node(x):
    return ad.GraphNode(np.asarray(x, dtype=np.float64))


class TestPrimitiveForward:
    def test_matmul_identity(self):
        out = ad.apply_primitive("matmul", [node(np.eye(2)), node([[1.0, 2.0], [3.0, 4.0]])])
        np.testing.assert_array_equal(out.value, [[1.0, 2.0], [3.0, 4.0]])

    def test_relu_definition(self):
        out = ad.apply_primitive("relu", [node([-1.0, 0.0, 2.0])])
        np.testing.assert_array_equal(out.value, [0.0, 0.0, 2.0])

    def test_l2_norm_three_four_five(self):
        out = ad.apply_primitive("l2_norm_eps", [node([3.0, 4.0])])
        assert abs(float(out.value) - 5.0) <= 1e-12

    def test_softmax_log_is_stable_at_large_logits(self):
        out = ad.softmax_log(node([1000.0, 0.0]))
        assert np.all(np.isfinite(out.value))
        assert abs(float(out.value[0])) < 1e-12

    def test_unknown_primitive(self):
        with pytest.raises(UnknownPrimitive):
            ad.apply_primitive("convolve", [node([1.0])])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ad.apply_primitive("matmul", [node(np.ones((2, 3))), node(np.ones((2, 3)))])
        with pytest.raises(ShapeMismatch):
            ad.add(node([1.0, 2.0]), node([1.0, 2.0, 3.0]))
        with pytest.raises(ShapeMismatch):
            ad.hinge_max0(node([1.0, 2.0]))
        with pytest.raises(ShapeMismatch):
            ad.dot(node([1.0]), node([1.0, 2.0]))


class TestBackward:
    def test_dot_self_gradient(self):
        x = node([1.0, 2.0, 3.0])
        ad.backward(ad.dot(x, x))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_relu_subgradient_zero_on_negative_side(self):
        x = node([-1.0, 1.0])
        ad.backward(ad.sum_all(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_root_gradient_is_one(self):
        x = node([2.0])
        root = ad.sum_all(x)
        ad.backward(root)
        np.testing.assert_array_equal(root.grad, 1.0)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(NonScalarRoot):
            ad.backward(node([1.0, 2.0]))

    def test_double_backward_rejected_and_reset_allows_rerun(self):
        x = node([1.0, 2.0])
        root = ad.dot(x, x)
        ad.backward(root)
        with pytest.raises(DoubleBackward):
            ad.backward(root)
        ad.reset_graph(root)
        ad.backward(root)
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_accumulation_when_node_feeds_two_paths(self):
        x = node([1.0, 2.0])
        root = ad.add(ad.dot(x, x), ad.sum_all(x))  # x.x + sum(x)
        ad.backward(root)
        np.testing.assert_allclose(x.grad, [3.0, 5.0])  # 2x + 1

    def test_backward_is_bit_reproducible(self):
        rng = np.random.default_rng(5)
        vals = [rng.normal(size=(3, 3)), rng.normal(size=3)]

        def run():
            a, b = node(vals[0]), node(vals[1])
            y = ad.matmul(a, b)
            root = ad.dot(y, y)
            ad.backward(root)
            return a.grad.copy(), b.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])

    def test_inter_loss_gradient_matches_finite_differences(self):
        # triplet hinge on a fixed random triple, checked against an
        # independent numeric gradient at h = 1e-5
        rng = np.random.default_rng(7)
        a0, p0, n0 = rng.normal(size=(3, 6))

        def loss_value(a_val):
            d_ap = np.sqrt(np.sum((a_val - p0) ** 2) + ad.NORM_EPSILON)
            d_an = np.sqrt(np.sum((a_val - n0) ** 2) + ad.NORM_EPSILON)
            return max(0.0, d_ap - d_an + 0.3)

        a = node(a0)
        d_ap = ad.l2_norm_eps(ad.subtract(a, node(p0)))
        d_an = ad.l2_norm_eps(ad.subtract(a, node(n0)))
        root = ad.hinge_max0(ad.add(ad.subtract(d_ap, d_an), node(0.3)))
        assert float(root.value) > 1e-3  # hinge active for this seed
        ad.backward(root)
        expected = numeric_gradient(loss_value, a0, h=1e-5)
        rel = np.abs(a.grad - expected) / np.maximum(np.abs(expected), 1e-8)
        assert rel.max() < 1e-4


def _scalarize(out, rng):
    """Reduce any primitive output to a scalar with random weightings."""
    if out.value.ndim == 0:
        return out, ()
    if out.value.ndim == 1:
        w = rng.normal(size=out.value.shape)
        return ad.dot(out, node(w)), (w,)
    w1 = rng.normal(size=out.value.shape[1])
    w2 = rng.normal(size=out.value.shape[0])
    reduced = ad.matmul(out, node(w1))
    return ad.dot(reduced, node(w2)), (w1, w2)


PRIMITIVE_CASES = [
    ("matmul", lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
    ("matmul", lambda rng: [rng.normal(size=4), rng.normal(size=(4, 3))]),
    ("matmul", lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=4)]),
    ("add", lambda rng: [rng.normal(size=5), rng.normal(size=5)]),
    ("subtract", lambda rng: [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
    ("scalar_multiply", lambda rng: [rng.normal(size=4), rng.normal(size=())]),
    ("relu", lambda rng: [_away_from_kink(rng.normal(size=6))]),
    ("mean_over_axis", lambda rng: [rng.normal(size=(4, 3))]),
    ("sum", lambda rng: [rng.normal(size=(2, 4))]),
    ("l2_norm_eps", lambda rng: [rng.normal(size=5)]),
    ("softmax_log", lambda rng: [rng.normal(size=6)]),
    ("hinge_max0", lambda rng: [_away_from_kink(rng.normal(size=()))]),
    ("dot", lambda rng: [rng.normal(size=5), rng.normal(size=5)]),
]


def _away_from_kink(x, margin=1e-3):
    # finite differences are ill-posed within h of the relu/hinge kink
    x = np.asarray(x)
    return np.where(np.abs(x) < margin, x + 2 * margin, x)


def test_every_primitive_gradient_matches_finite_differences():
    """100+ randomized trials across the whole primitive set, h = 1e-5."""
    rng = np.random.default_rng(20240)
    trials = 0
    for rep in range(9):
        for op, make in PRIMITIVE_CASES:
            inputs = make(rng)
            nodes = [node(v) for v in inputs]
            out = ad.apply_primitive(op, nodes)
            root, weights = _scalarize(out, rng)
            ad.backward(root)

            def value_fn(which, probe):
                vals = [v.copy() for v in inputs]
                vals[which] = probe
                out_v = ad.apply_primitive(op, [node(v) for v in vals]).value
                if out_v.ndim == 0:
                    return float(out_v)
                if out_v.ndim == 1:
                    return float(out_v @ weights[0])
                return float((out_v @ weights[0]) @ weights[1])

            for i, v in enumerate(inputs):
                expected = numeric_gradient(lambda p, i=i: value_fn(i, p), v, h=1e-5)
                got = nodes[i].grad
                rel = np.abs(got - expected) / np.maximum(
                    np.maximum(np.abs(got), np.abs(expected)), 1e-8
                )
                assert rel.max() < 1e-4, f"{op} input {i}: {rel.max()}"
                trials += 1
    assert trials >= 100


class TestCheckGradients:
    def test_quadratic_is_exact_up_to_rounding(self):
        def builder(params):
            (theta,) = params
            return ad.scalar_multiply(ad.dot(theta, theta), 0.5)

        err = ad.check_gradients(builder, [np.array([1.0, -2.0])], h=1e-5)
        assert err < 1e-9

    def test_cross_entropy_on_one_tracklet(self):
        # CE of a linear head on a fixed feature vector, w.r.t. the weights
        feat = np.array([0.4, -1.2, 0.7])
        onehot = np.zeros(4)
        onehot[1] = 1.0

        def builder(params):
            w, b = params
            logits = ad.add(ad.matmul(node(feat), w), b)
            return ad.scalar_multiply(
                ad.dot(ad.softmax_log(logits), node(onehot)), -1.0
            )

        rng = np.random.default_rng(3)
        err = ad.check_gradients(builder, [rng.normal(size=(3, 4)), np.zeros(4)], h=1e-5)
        assert err < 1e-5

    def test_non_finite_loss_raises(self):
        def builder(params):
            (theta,) = params
            out = ad.scalar_multiply(ad.dot(theta, theta), np.inf)
            return out

        with pytest.raises(NonFiniteLoss):
            ad.check_gradients(builder, [np.array([1.0])], h=1e-5)


class TestSgdStep:
    def test_vanilla_step(self):
        p = ad.parameter([1.0])
        p.grad = np.array([2.0])
        state = ad.OptimizerState.for_params([p], learning_rate=0.1)
        ad.sgd_step([p], state)
        np.testing.assert_allclose(p.value, [0.8])
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_momentum_two_identical_gradients(self):
        p = ad.parameter([0.0])
        state = ad.OptimizerState.for_params([p], learning_rate=0.1, momentum=0.5)
        for _ in range(2):
            p.grad = np.array([1.0])
            ad.sgd_step([p], state)
        np.testing.assert_allclose(p.value, [-0.25])

    def test_pure_weight_decay(self):
        p = ad.parameter([1.0])
        p.grad = np.array([0.0])
        state = ad.OptimizerState.for_params(
            [p], learning_rate=0.1, weight_decay=0.0005
        )
        ad.sgd_step([p], state)
        np.testing.assert_allclose(p.value, [0.99995])

    def test_zero_momentum_zero_decay_reduces_to_plain_sgd(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            theta = rng.normal(size=4)
            grad = rng.normal(size=4)
            lr = float(rng.uniform(0.01, 0.5))
            p = ad.parameter(theta)
            p.grad = grad.copy()
            ad.sgd_step([p], ad.OptimizerState.for_params([p], learning_rate=lr))
            np.testing.assert_array_equal(p.value, theta - lr * grad)

    def test_non_finite_gradient_rejected(self):
        p = ad.parameter([1.0])
        p.grad = np.array([np.nan])
        state = ad.OptimizerState.for_params([p], learning_rate=0.1)
        with pytest.raises(NonFiniteGradient):
            ad.sgd_step([p], state)


def test_l2_norm_eps_gradient_norm_bounded():
    rng = np.random.default_rng(11)
    for scale in (1e-9, 1e-3, 1.0, 1e3):
        v = node(rng.normal(size=5) * scale)
        ad.backward(ad.l2_norm_eps(v))
        assert np.sqrt(np.sum(v.grad**2)) <= 1.0 + 1e-12
