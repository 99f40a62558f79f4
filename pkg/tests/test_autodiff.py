import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmog import autodiff as ad
from hmog.autodiff import Graph, GraphError, Parameter, ShapeError, Tensor, grad_check, input_gradient


def grad_of(fn, *params):
    with Graph() as g:
        loss = fn()
        return [t.data for t in g.gradients(loss, list(params))]


# ---------------------------------------------------------------------------
# forward values


def test_sigmoid_of_zero_is_half():
    np.testing.assert_array_equal(ad.sigmoid(Tensor([0.0])).data, [0.5])


def test_matmul_row_sums():
    out = ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))
    np.testing.assert_array_equal(out.data, [[3.0], [3.0]])


def test_softmax_uniform_logits():
    np.testing.assert_allclose(ad.softmax(Tensor([1.0, 1.0, 1.0, 1.0])).data, [0.25] * 4, rtol=0, atol=1e-15)


def test_forward_op_dispatch_matches_direct_call():
    x = Tensor([[0.3, -1.2, 2.0]])
    np.testing.assert_array_equal(ad.forward_op("tanh", [x]).data, np.tanh(x.data))
    with pytest.raises(ValueError, match="unknown op kind"):
        ad.forward_op("cosh", [x])


@pytest.mark.parametrize("value", [-1000.0, -50.0, 0.0, 50.0, 1000.0])
def test_sigmoid_softmax_softplus_are_overflow_safe(value):
    x = Tensor([value, -value, 0.0])
    for fn in (ad.sigmoid, ad.softmax, ad.softplus):
        assert np.all(np.isfinite(fn(x).data))
    np.testing.assert_allclose(ad.softmax(x).data.sum(), 1.0, atol=1e-15)


def test_broadcast_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4,\)"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="concat"):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))])


def test_straight_through_forward_is_exactly_hard():
    soft = Parameter([[0.2, 0.5, 0.3]])
    hard = np.array([[0.0, 1.0, 0.0]])
    out = ad.straight_through(hard, soft)
    np.testing.assert_array_equal(out.data, hard)
    (g,) = grad_of(lambda: ad.tsum(ad.mul(ad.straight_through(hard, soft), Tensor([[1.0, 2.0, 3.0]]))), soft)
    np.testing.assert_array_equal(g, [[1.0, 2.0, 3.0]])


# ---------------------------------------------------------------------------
# backward


def test_power_rule():
    x = Parameter([3.0])
    (g,) = grad_of(lambda: ad.tsum(ad.square(x)), x)
    np.testing.assert_array_equal(g, [6.0])


def test_sigmoid_derivative_at_zero():
    x = Parameter([0.0])
    (g,) = grad_of(lambda: ad.tsum(ad.sigmoid(x)), x)
    np.testing.assert_array_equal(g, [0.25])


def test_gradients_accumulate_over_reuse():
    x = Parameter([2.0])
    # d/dx (x*x + 3x) = 2x + 3
    (g,) = grad_of(lambda: ad.tsum(ad.add(ad.mul(x, x), ad.scale(x, 3.0))), x)
    np.testing.assert_array_equal(g, [7.0])


def test_non_scalar_loss_rejected():
    x = Parameter([1.0, 2.0])
    with Graph() as g:
        y = ad.square(x)
        with pytest.raises(GraphError, match="scalar"):
            g.backward(y)


def test_loss_from_other_graph_rejected():
    x = Parameter([1.0])
    with Graph():
        loss = ad.tsum(ad.square(x))
    with Graph() as other:
        with pytest.raises(GraphError, match="not a node of this graph"):
            other.backward(loss)


def test_unreachable_parameter_gets_zero_gradient():
    x, y = Parameter([1.0]), Parameter([5.0, 6.0])
    gx, gy = grad_of(lambda: ad.tsum(ad.square(x)), x, y)
    np.testing.assert_array_equal(gy, [0.0, 0.0])


def test_no_grad_records_nothing():
    x = Parameter([1.0])
    with Graph() as g:
        with ad.no_grad():
            y = ad.square(x)
    assert len(g) == 0 and y.node is None


def test_three_layer_network_matches_finite_differences(rng):
    x = Tensor(rng.normal(size=(6, 4)))
    w1, b1 = Parameter(rng.normal(size=(5, 4))), Parameter(rng.normal(size=5))
    w2, b2 = Parameter(rng.normal(size=(5, 5))), Parameter(rng.normal(size=5))
    w3, b3 = Parameter(rng.normal(size=(1, 5))), Parameter(rng.normal(size=1))

    def loss():
        h = ad.tanh(ad.linear(x, w1, b1))
        h = ad.softplus(ad.linear(h, w2, b2))
        return ad.mean(ad.square(ad.linear(h, w3, b3)))

    assert grad_check(loss, [w1, b1, w2, b2, w3, b3]) <= 1e-4


def test_grad_check_exact_for_quadratic(rng):
    a = Tensor(rng.normal(size=(3, 3)))
    p = Parameter(rng.normal(size=3))
    assert grad_check(lambda: ad.tsum(ad.square(ad.matvec(a, p))), [p], eps=1e-5) <= 1e-6


def test_grad_check_reports_inf_for_non_finite():
    p = Parameter([0.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        assert grad_check(lambda: ad.tsum(ad.log(p)), [p]) == math.inf


# ---------------------------------------------------------------------------
# double backprop


def test_cubic_input_gradient_and_penalty_gradient():
    x = Parameter([1.0])
    with Graph() as g:
        y = ad.tsum(ad.mul(ad.square(x), x))
        gx = input_gradient(g, y, x)
        np.testing.assert_allclose(gx.data, [3.0], rtol=1e-15)
        penalty = ad.tsum(ad.square(ad.sub(ad.l2_norm(gx), 1.0)))
        (gp,) = g.gradients(penalty, [x])
    # d/dx (3x^2 - 1)^2 = 2 (3x^2 - 1) 6x = 24 at x = 1
    np.testing.assert_allclose(gp.data, [24.0], rtol=1e-14)

    def penalty_value():
        y2 = ad.tsum(ad.mul(ad.square(x), x))
        return ad.tsum(ad.square(ad.sub(ad.l2_norm(input_gradient(ad.active_graph(), y2, x)), 1.0)))

    # finite-difference cross-check of the hand value
    assert grad_check(penalty_value, [x]) <= 1e-8


def test_constant_function_has_zero_input_gradient():
    x = Parameter([0.7, -0.2])
    with Graph() as g:
        c = ad.tsum(ad.add(ad.scale(x, 0.0), 5.0))
        np.testing.assert_array_equal(input_gradient(g, c, x).data, [0.0, 0.0])


def test_linear_input_gradient_and_weight_gradient(rng):
    w = Parameter(rng.normal(size=3))
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Graph() as g:
        y = ad.tsum(ad.mul(w, x))
        gx = input_gradient(g, y, x)
        np.testing.assert_allclose(gx.data, w.data, rtol=1e-15)
        (gw,) = g.gradients(ad.tsum(ad.square(gx)), [w])
    np.testing.assert_allclose(gw.data, 2 * w.data, rtol=1e-15)

    def sq_norm_of_input_grad():
        xx = Tensor(x.data, requires_grad=True)
        h = ad.active_graph()
        return ad.tsum(ad.square(input_gradient(h, ad.tsum(ad.mul(w, xx)), xx)))

    assert grad_check(sq_norm_of_input_grad, [w]) <= 1e-8


def test_non_twice_differentiable_op_is_named():
    x = Parameter([0.3, -0.4])
    with Graph() as g:
        y = ad.tsum(ad.leaky_relu(x))
        with pytest.raises(GraphError, match="leaky_relu"):
            input_gradient(g, y, x)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20)
def test_linear_input_gradient_is_constant_in_x(seed):
    r = np.random.default_rng(seed)
    w, b = Parameter(r.normal(size=(1, 3))), Parameter(r.normal(size=1))
    grads = []
    for _ in range(2):
        x = Tensor(r.normal(size=(1, 3)) * 10, requires_grad=True)
        with Graph() as g:
            grads.append(input_gradient(g, ad.tsum(ad.linear(x, w, b)), x).data)
    np.testing.assert_array_equal(grads[0], grads[1])


# ---------------------------------------------------------------------------
# per-op gradient property


def _positive(r, shape):
    return r.uniform(0.5, 2.0, size=shape)


OP_CASES = {
    "matmul": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))], lambda a, b: ad.matmul(a, b)),
    "matvec": (lambda r: [r.normal(size=(3, 4)), r.normal(size=4)], lambda a, b: ad.matvec(a, b)),
    "linear": (
        lambda r: [r.normal(size=(3, 4)), r.normal(size=(2, 4)), r.normal(size=2)],
        lambda x, w, b: ad.linear(x, w, b),
    ),
    "add_broadcast": (lambda r: [r.normal(size=(3, 4)), r.normal(size=4)], lambda a, b: ad.add(a, b)),
    "subtract": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(1, 4))], lambda a, b: ad.sub(a, b)),
    "multiply": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: ad.mul(a, b)),
    "scale": (lambda r: [r.normal(size=(3, 4))], lambda a: ad.scale(a, -1.7)),
    "sigmoid": (lambda r: [r.normal(size=(3, 4)) * 3], ad.sigmoid),
    "softmax": (lambda r: [r.normal(size=(3, 4)) * 3], ad.softmax),
    "tanh": (lambda r: [r.normal(size=(3, 4))], ad.tanh),
    "softplus": (lambda r: [r.normal(size=(3, 4)) * 3], ad.softplus),
    "square": (lambda r: [r.normal(size=(3, 4))], ad.square),
    "sum": (lambda r: [r.normal(size=(3, 4))], lambda a: ad.tsum(a, axis=0)),
    "mean": (lambda r: [r.normal(size=(3, 4))], lambda a: ad.mean(a, axis=1, keepdims=True)),
    "l2_norm": (lambda r: [r.normal(size=(3, 4))], ad.l2_norm),
    "concat": (lambda r: [r.normal(size=(3, 2)), r.normal(size=(3, 3))], lambda a, b: ad.concat([a, b])),
    "reciprocal_sqrt": (lambda r: [_positive(r, (3, 4))], ad.rsqrt),
    "reciprocal": (lambda r: [_positive(r, (3, 4))], ad.reciprocal),
    "exp": (lambda r: [r.normal(size=(3, 4))], ad.exp),
    "log": (lambda r: [_positive(r, (3, 4))], ad.log),
    "transpose": (lambda r: [r.normal(size=(3, 4))], ad.transpose),
    "getitem": (lambda r: [r.normal(size=(5, 4))], lambda a: ad.getitem(a, np.array([0, 2, 2, 4]))),
}


@pytest.mark.parametrize("kind", sorted(OP_CASES))
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=100)
def test_op_gradient_matches_finite_differences(kind, seed):
    make, op = OP_CASES[kind]
    r = np.random.default_rng(seed)
    params = [Parameter(a) for a in make(r)]
    out_shape = op(*[Tensor(p.data) for p in params]).shape
    weights = Tensor(r.normal(size=out_shape))
    assert grad_check(lambda: ad.tsum(ad.mul(op(*params), weights)), params) <= 1e-4


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "softplus", "softmax", "l2_norm", "square", "exp"])
def test_second_order_matches_finite_differences(kind):
    r = np.random.default_rng(7)
    make, op = OP_CASES[kind]
    # entries bounded away from zero keep every gradient entry well above
    # finite-difference noise
    w = Parameter(r.uniform(0.3, 1.0, size=(3, 4)) * r.choice([-1.0, 1.0], size=(3, 4)))
    x0 = make(r)[0]
    x0 = np.sign(x0) * (0.3 + np.abs(x0))

    def penalty():
        x = Tensor(x0, requires_grad=True)
        y = ad.tsum(op(ad.mul(x, w)))
        return ad.tsum(ad.square(input_gradient(ad.active_graph(), y, x)))

    assert grad_check(penalty, [w]) <= 1e-4


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(-8, 8))
@settings(max_examples=30)
def test_backward_is_linear_in_loss_scale(seed, k):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(4, 3)))
    w = Parameter(r.normal(size=(2, 3)))
    b = Parameter(r.normal(size=2))
    a = 2.0**k  # a power of two keeps the comparison exact

    def loss():
        return ad.mean(ad.tanh(ad.linear(x, w, b)))

    base = grad_of(loss, w, b)
    scaled = grad_of(lambda: ad.scale(loss(), a), w, b)
    for g0, g1 in zip(base, scaled):
        np.testing.assert_array_equal(g1, a * g0)


def test_forward_backward_is_bit_identical():
    def run():
        r = np.random.default_rng(99)
        x = Tensor(r.normal(size=(8, 3)))
        w, b = Parameter(r.normal(size=(4, 3))), Parameter(r.normal(size=4))
        with Graph() as g:
            loss = ad.mean(ad.softplus(ad.linear(x, w, b)))
            return loss.data.copy(), [t.data.copy() for t in g.gradients(loss, [w, b])]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes()
    assert all(a.tobytes() == b.tobytes() for a, b in zip(g1, g2))


def test_l2_norm_gradient_at_zero_is_zero():
    x = Parameter(np.zeros((2, 3)))
    (g,) = grad_of(lambda: ad.tsum(ad.l2_norm(x)), x)
    np.testing.assert_array_equal(g, np.zeros((2, 3)))


def test_graphs_on_separate_threads_are_isolated():
    results = {}

    def work(tag, value):
        x = Parameter([value])
        for _ in range(50):
            (g,) = grad_of(lambda: ad.tsum(ad.mul(ad.square(x), x)), x)
        results[tag] = g[0]

    threads = [threading.Thread(target=work, args=(i, float(i + 1))) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == {i: 3.0 * (i + 1) ** 2 for i in range(4)}
