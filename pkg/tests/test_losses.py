import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmog import autodiff as ad
from hmog.autodiff import Graph, GraphError, ShapeError, Tensor, grad_check
from hmog.critics import CriticNet
from hmog.losses import (
    classification_term,
    gradient_penalty,
    madgan_losses,
    mgan_losses,
    original_gan_losses,
    wasserstein_losses,
)

from oracles import numeric_gradient, relative_error


def clog(p):
    return math.log(max(p, 1e-12))


def mean(xs):
    return math.fsum(xs) / len(xs)


probs = st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20)


def test_uninformed_discriminator():
    d, g = original_gan_losses(Tensor(np.full(8, 0.5)), Tensor(np.full(8, 0.5)))
    assert d.item() == pytest.approx(2 * math.log(2), rel=1e-15)
    assert g.item() == pytest.approx(-math.log(2), rel=1e-15)


def test_perfect_discriminator_loss_vanishes():
    d, _ = original_gan_losses(Tensor([1.0 - 1e-15] * 4), Tensor([1e-15] * 4))
    assert abs(d.item()) < 1e-12


def test_saturated_discriminator_is_finite():
    d, g = original_gan_losses(Tensor([0.0]), Tensor([1.0]))
    assert d.item() == pytest.approx(-2 * math.log(1e-12))
    assert np.isfinite(g.item())


@given(real=probs, fake=probs)
@settings(max_examples=100)
def test_original_gan_matches_scalar_formula(real, fake):
    d, g = original_gan_losses(Tensor(real), Tensor(fake))
    expected_g = mean([clog(1 - f) for f in fake])
    assert d.item() == pytest.approx(-mean([clog(r) for r in real]) - expected_g, abs=1e-10)
    assert g.item() == pytest.approx(expected_g, abs=1e-10)


@pytest.mark.parametrize("fn", [original_gan_losses, wasserstein_losses])
def test_empty_batch_is_an_error(fn):
    with pytest.raises(ValueError, match="empty"):
        fn(Tensor(np.zeros(0)), Tensor([0.5]))


def test_wasserstein_examples():
    c, _ = wasserstein_losses(Tensor([0.3, -2.0]), Tensor([0.3, -2.0]))
    assert c.item() == 0.0
    c, g = wasserstein_losses(Tensor([2.0, 4.0]), Tensor([0.0, 2.0]))
    assert (c.item(), g.item()) == (-2.0, -1.0)


@given(
    real=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
    fake=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20),
)
@settings(max_examples=100)
def test_wasserstein_matches_direct_means(real, fake):
    c, g = wasserstein_losses(Tensor(real), Tensor(fake))
    assert c.item() == pytest.approx(-(mean(real) - mean(fake)), abs=1e-10)
    assert g.item() == pytest.approx(-mean(fake), abs=1e-10)


def test_madgan_uniform_softmax():
    u = Tensor(np.full((6, 4), 0.25))
    d, _ = madgan_losses(u, u, np.array([1, 2, 3, 1, 2, 3]))
    assert d.item() == pytest.approx(4 * math.log(2), rel=1e-15)


def test_madgan_generator_term_at_half():
    fake = Tensor(np.tile([0.5, 0.5, 0.0], (3, 1)))
    _, g = madgan_losses(fake, fake, np.array([1, 2, 1]))
    assert g.item() == pytest.approx(-math.log(2), rel=1e-15)


def _softmax_rows(r, n, k):
    e = np.exp(r.normal(size=(n, k)))
    return e / e.sum(axis=1, keepdims=True)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 6), n=st.integers(1, 12))
@settings(max_examples=60)
def test_madgan_matches_scalar_formula(seed, k, n):
    r = np.random.default_rng(seed)
    real, fake = _softmax_rows(r, n, k + 1), _softmax_rows(r, n, k + 1)
    choice = r.integers(1, k + 1, size=n)
    d, g = madgan_losses(Tensor(real), Tensor(fake), choice)
    expected_d = -mean([clog(real[i, 0]) for i in range(n)]) - mean([clog(fake[i, choice[i]]) for i in range(n)])
    assert d.item() == pytest.approx(expected_d, abs=1e-10)
    assert g.item() == pytest.approx(mean([clog(1 - fake[i, 0]) for i in range(n)]), abs=1e-10)


@pytest.mark.parametrize("choice", [[0, 1], [1, 4], [1]])
def test_madgan_rejects_bad_indices(choice):
    u = Tensor(np.full((2, 4), 0.25))
    with pytest.raises(ValueError):
        madgan_losses(u, u, np.array(choice))


def test_madgan_rejects_mismatched_widths():
    with pytest.raises(ShapeError):
        madgan_losses(Tensor(np.full((2, 3), 1 / 3)), Tensor(np.full((2, 4), 0.25)), np.array([1, 1]))


def test_classification_term_examples():
    perfect = Tensor(np.eye(4)[[0, 1, 2, 3]])
    assert classification_term(perfect, np.array([1, 2, 3, 4])).item() == pytest.approx(0.0, abs=1e-15)
    uniform = Tensor(np.full((4, 4), 0.25))
    assert classification_term(uniform, np.array([1, 2, 3, 4])).item() == pytest.approx(math.log(4), rel=1e-15)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 6), n=st.integers(1, 12))
@settings(max_examples=60)
def test_mgan_matches_scalar_formula(seed, k, n):
    r = np.random.default_rng(seed)
    real, fake = r.uniform(0.01, 0.99, n), r.uniform(0.01, 0.99, n)
    c = _softmax_rows(r, n, k)
    choice = r.integers(1, k + 1, size=n)
    d, gc = mgan_losses(Tensor(real), Tensor(fake), Tensor(c), choice)
    g_term = mean([clog(1 - f) for f in fake])
    assert d.item() == pytest.approx(-mean([clog(x) for x in real]) - g_term, abs=1e-10)
    expected = g_term - mean([clog(c[i, choice[i] - 1]) for i in range(n)])
    assert gc.item() == pytest.approx(expected, abs=1e-10)


def test_mgan_rejects_real_class_index():
    with pytest.raises(ValueError, match="reserved"):
        mgan_losses(Tensor([0.5]), Tensor([0.5]), Tensor([[1.0, 0.0]]), np.array([0]))


# ---------------------------------------------------------------------------
# gradient penalty


def linear_critic(w):
    critic = CriticNet(len(w), [], np.random.default_rng(0))
    critic.net.layers[-1].W.data[...] = np.asarray(w, dtype=float)[None, :]
    critic.net.layers[-1].b.data[...] = 0.3
    return critic


def _penalty(critic, real, fake, eps):
    with Graph():
        return gradient_penalty(critic, real, fake, eps=eps).item()


@pytest.mark.parametrize("w", [[1.0, 0.0], [0.6, -0.8], [1 / math.sqrt(2), 1 / math.sqrt(2)]])
def test_unit_norm_linear_critic_has_zero_penalty(w):
    r = np.random.default_rng(0)
    real, fake = r.normal(size=(16, 2)), r.normal(size=(16, 2))
    assert _penalty(linear_critic(w), real, fake, r.random((16, 1))) == pytest.approx(0.0, abs=1e-30)


def test_zero_critic_has_unit_penalty():
    r = np.random.default_rng(1)
    critic = CriticNet(2, [8], r)
    critic.net.layers[-1].W.data[...] = 0.0
    assert _penalty(critic, r.normal(size=(8, 2)), r.normal(size=(8, 2)), r.random((8, 1))) == 1.0


@given(norm=st.floats(0.0, 5.0))
@settings(max_examples=50)
def test_linear_critic_penalty_is_squared_norm_gap(norm):
    r = np.random.default_rng(2)
    w = np.array([0.8, 0.6]) * norm
    value = _penalty(linear_critic(w), r.normal(size=(4, 2)), r.normal(size=(4, 2)), r.random((4, 1)))
    assert value == pytest.approx((norm - 1.0) ** 2, abs=1e-12)


def _fd_penalty(critic, x_hat, h=1e-6):
    """Penalty with the input gradient taken by central differences."""
    total = 0.0
    for row in x_hat:
        g = []
        for j in range(len(row)):
            up, down = row.copy(), row.copy()
            up[j] += h
            down[j] -= h
            with ad.no_grad():
                g.append((critic(Tensor(up[None])).item() - critic(Tensor(down[None])).item()) / (2 * h))
        total += (math.sqrt(sum(v * v for v in g)) - 1.0) ** 2
    return total / len(x_hat)


def test_penalty_value_and_gradient_match_finite_differences():
    r = np.random.default_rng(3)
    critic = CriticNet(2, [6, 6], r)
    critic.assign_names("critic.")
    real, fake, eps = r.normal(size=(8, 2)), r.normal(size=(8, 2)), r.random((8, 1))
    value = _penalty(critic, real, fake, eps)
    assert relative_error(value, _fd_penalty(critic, eps * real + (1 - eps) * fake)) <= 1e-3

    params = critic.trainable_parameters()
    with Graph() as g:
        analytic = [t.data for t in g.gradients(gradient_penalty(critic, real, fake, eps=eps), params)]
    numeric = numeric_gradient(lambda: gradient_penalty(critic, real, fake, eps=eps), params)
    assert max(relative_error(a, n) for a, n in zip(analytic, numeric)) <= 1e-3
    assert grad_check(lambda: gradient_penalty(critic, real, fake, eps=eps), params) <= 1e-3


def test_penalty_draws_eps_from_rng():
    r = np.random.default_rng(4)
    critic = CriticNet(2, [4], r)
    real, fake = r.normal(size=(5, 2)), r.normal(size=(5, 2))
    with Graph():
        a = gradient_penalty(critic, real, fake, np.random.default_rng(9)).item()
    eps = np.random.default_rng(9).random((5, 1))
    assert a == _penalty(critic, real, fake, eps)


def test_penalty_needs_graph_and_smooth_critic():
    r = np.random.default_rng(5)
    x = r.normal(size=(3, 2))
    with pytest.raises(GraphError, match="active Graph"):
        gradient_penalty(CriticNet(2, [4], r), x, x, r)
    with Graph(), pytest.raises(GraphError, match="twice-differentiable"):
        gradient_penalty(CriticNet(2, [4], r, activation="leaky_relu"), x, x, r)


def test_penalty_rejects_shape_mismatch():
    r = np.random.default_rng(6)
    with Graph(), pytest.raises(ShapeError):
        gradient_penalty(CriticNet(2, [4], r), np.zeros((3, 2)), np.zeros((4, 2)), r)
