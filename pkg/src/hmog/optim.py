"""Adam with the optional AMSGrad running maximum."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor


class NumericalError(ArithmeticError):
    """A loss or gradient stopped being finite."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    v_hat_max: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> OptimizerState:
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            v_hat_max=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence,
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    amsgrad: bool = False,
) -> None:
    """One bias-corrected Adam update, in place.

    With ``amsgrad`` the denominator uses the elementwise running maximum of
    the bias-corrected second moment.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    b1, b2 = betas
    for p, g in zip(params, grads):
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {getattr(p, 'name', '')!r} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {getattr(p, 'name', '')!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        if amsgrad:
            v_hat = state.v_hat_max[i] = np.maximum(state.v_hat_max[i], v_hat)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    params: list[Parameter]
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    eps: float = 1e-8
    amsgrad: bool = True
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = OptimizerState.zeros_like(self.params)

    def step(self, grads: Sequence) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.betas, self.eps, self.amsgrad)
