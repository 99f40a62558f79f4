"""Discriminator / critic networks and the MGAN auxiliary classifier."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import SMOOTH_ACTIVATIONS, DenseNet, Module

HEADS = ("wasserstein", "sigmoid", "softmax")


class CriticNet(Module):
    """Dense network ``data_dim -> hidden... -> head``.

    ``wasserstein`` returns unbounded scores of shape (n,), ``sigmoid``
    returns probabilities of being real (n,), ``softmax`` returns (n, K+1)
    class probabilities where column 0 is "real".
    """

    def __init__(
        self,
        data_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
        head: str = "wasserstein",
        n_classes: int | None = None,
        activation: str = "tanh",
    ):
        if head not in HEADS:
            raise ValueError(f"unknown critic head {head!r}; expected one of {HEADS}")
        if head == "softmax":
            if n_classes is None or n_classes < 2:
                raise ValueError("softmax head needs n_classes = K + 1 >= 2")
            n_out = n_classes
        else:
            n_out = 1
        self.data_dim = data_dim
        self.head = head
        self.net = DenseNet([data_dim, *hidden, n_out], rng, activation)

    @property
    def twice_differentiable(self) -> bool:
        return self.net.activations[0] in SMOOTH_ACTIVATIONS

    def logits(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ad.ShapeError(
                f"critic ({self.head} head) expects (n, {self.data_dim}) samples, got {x.shape}"
            )
        return self.net(x)

    def forward(self, x: Tensor) -> Tensor:
        return critic_forward(self, x)


def critic_forward(net: CriticNet, x: Tensor) -> Tensor:
    out = net.logits(x)
    if net.head == "softmax":
        return ad.softmax(out)
    out = ad.reshape(out, (x.shape[0],))
    return ad.sigmoid(out) if net.head == "sigmoid" else out


class AuxClassifier(Module):
    """K-way softmax classifier guessing which generator made a fake."""

    def __init__(self, data_dim: int, hidden: Sequence[int], k: int, rng: np.random.Generator, activation="tanh"):
        if k < 1:
            raise ValueError(f"classifier needs K >= 1 classes, got {k}")
        self.data_dim = data_dim
        self.net = DenseNet([data_dim, *hidden, k], rng, activation)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.data_dim:
            raise ad.ShapeError(f"classifier expects (n, {self.data_dim}) samples, got {x.shape}")
        return ad.softmax(self.net(x))
