"""Adversarial objectives written as quantities to minimise.

Likelihood terms take ``log(max(p, 1e-12))`` so saturated discriminators
give large but finite losses.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Tensor
from .critics import CriticNet

LOG_FLOOR = 1e-12


def safe_log(p: Tensor) -> Tensor:
    return ad.log(ad.clamp_min(p, LOG_FLOOR))


def _require_batch(*batches: Tensor) -> None:
    for b in batches:
        if b.shape[0] == 0:
            raise ValueError("loss on an empty batch")


def _check_labels(choice, n_fake: int, k: int) -> np.ndarray:
    choice = np.asarray(choice)
    if choice.shape != (n_fake,):
        raise ValueError(f"expected {n_fake} generator indices, got shape {choice.shape}")
    if np.any(choice == 0):
        raise ValueError("generator index 0 is reserved for the real class")
    if np.any(choice < 1) or np.any(choice > k):
        raise ValueError(f"generator indices must lie in [1, {k}]")
    return choice.astype(np.intp)


def original_gan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator: -E log D(x) - E log(1 - D(G(z))); generator: E log(1 - D(G(z)))."""
    _require_batch(d_real, d_fake)
    fake_term = ad.mean(safe_log(ad.sub(1.0, d_fake)))
    d_loss = ad.sub(ad.scale(ad.mean(safe_log(d_real)), -1.0), fake_term)
    return d_loss, fake_term


def wasserstein_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    _require_batch(d_real, d_fake)
    fake_mean = ad.mean(d_fake)
    critic_loss = ad.scale(ad.sub(ad.mean(d_real), fake_mean), -1.0)
    return critic_loss, ad.scale(fake_mean, -1.0)


def madgan_losses(d_real: Tensor, d_fake: Tensor, choice) -> tuple[Tensor, Tensor]:
    """``d_real``/``d_fake`` are (n, K+1) softmax outputs; ``choice`` is 1-based."""
    _require_batch(d_real, d_fake)
    if d_real.ndim != 2 or d_fake.ndim != 2 or d_real.shape[1] != d_fake.shape[1]:
        raise ad.ShapeError(f"madgan_losses: bad softmax shapes {d_real.shape}, {d_fake.shape}")
    k = d_fake.shape[1] - 1
    choice = _check_labels(choice, d_fake.shape[0], k)
    rows = np.arange(d_fake.shape[0])
    real_term = ad.mean(safe_log(d_real[:, 0]))
    class_term = ad.mean(safe_log(d_fake[rows, choice]))
    d_loss = ad.scale(ad.add(real_term, class_term), -1.0)
    g_loss = ad.mean(safe_log(ad.sub(1.0, d_fake[:, 0])))
    return d_loss, g_loss


def classification_term(c_outputs: Tensor, choice) -> Tensor:
    """-E log C_choice(G(z)) for (n, K) classifier outputs."""
    choice = _check_labels(choice, c_outputs.shape[0], c_outputs.shape[1])
    rows = np.arange(c_outputs.shape[0])
    return ad.scale(ad.mean(safe_log(c_outputs[rows, choice - 1])), -1.0)


def mgan_losses(d_real: Tensor, d_fake: Tensor, c_outputs: Tensor, choice) -> tuple[Tensor, Tensor]:
    """Returns (discriminator loss, joint generator + classifier loss)."""
    _require_batch(d_real, d_fake, c_outputs)
    d_loss, g_loss = original_gan_losses(d_real, d_fake)
    return d_loss, ad.add(g_loss, classification_term(c_outputs, choice))


def gradient_penalty(
    critic: CriticNet,
    real,
    fake,
    rng: np.random.Generator | None = None,
    eps: np.ndarray | None = None,
) -> Tensor:
    """Mean of (||grad D(x_hat)|| - 1)^2 at random real/fake interpolates.

    Must be called inside an active :class:`~hmog.autodiff.Graph`; the result
    can be back-propagated to the critic parameters.
    """
    graph = ad.active_graph()
    if graph is None:
        raise GraphError("gradient_penalty needs an active Graph")
    if not critic.twice_differentiable:
        raise GraphError(
            "gradient_penalty needs a twice-differentiable critic activation "
            f"(got {critic.net.activations[0]!r})"
        )
    if critic.head != "wasserstein":
        raise ValueError("gradient penalty applies to the wasserstein critic head")
    real = np.asarray(real.data if isinstance(real, Tensor) else real)
    fake = np.asarray(fake.data if isinstance(fake, Tensor) else fake)
    if real.shape != fake.shape:
        raise ad.ShapeError(f"gradient_penalty: real {real.shape} vs fake {fake.shape}")
    if eps is None:
        if rng is None:
            raise ValueError("gradient_penalty needs an rng or explicit eps")
        eps = rng.random((real.shape[0], 1))
    x_hat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = ad.tsum(critic(x_hat))
    grad = ad.input_gradient(graph, scores, x_hat)
    return ad.mean(ad.square(ad.sub(ad.l2_norm(grad), 1.0)))
