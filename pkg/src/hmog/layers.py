"""Parameter containers and dense layers shared by every network."""

from __future__ import annotations

from collections.abc import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

ACTIVATIONS = {
    "tanh": ad.tanh,
    "softplus": ad.softplus,
    "sigmoid": ad.sigmoid,
    "leaky_relu": ad.leaky_relu,
    "identity": lambda x: x,
}

# usable under the gradient penalty
SMOOTH_ACTIVATIONS = frozenset({"tanh", "softplus", "sigmoid", "identity"})


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_out, fan_in))


class Module:
    """Walks attributes in definition order to enumerate parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def assign_names(self, prefix: str = "") -> None:
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def parameter_count(self) -> int:
        return sum(p.size for p in self.trainable_parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    """Affine map ``x @ W.T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.W = Parameter(glorot(rng, n_out, n_in))
        self.b = Parameter(np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ad.ShapeError(f"dense: input width {x.shape[-1]} != layer width {self.n_in}")
        return ad.linear(x, self.W, self.b)


class DenseNet(Module):
    """Stack of dense layers with one activation between them.

    ``out_activation`` is applied after the last layer; by default the output
    is left linear.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        rng: np.random.Generator,
        activation: str = "tanh",
        out_activation: str = "identity",
    ):
        if len(sizes) < 2:
            raise ValueError(f"DenseNet needs at least input and output sizes, got {list(sizes)}")
        for name in (activation, out_activation):
            if name not in ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        self.layers = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self._activation = activation
        self._out_activation = out_activation

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> tuple[str, str]:
        return self._activation, self._out_activation

    def forward(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self._activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return ACTIVATIONS[self._out_activation](self.layers[-1](x))

    def first_activation(self, x: Tensor) -> Tensor:
        """Output of the first layer after its nonlinearity."""
        act = ACTIVATIONS[self._activation if len(self.layers) > 1 else self._out_activation]
        return act(self.layers[0](x))
