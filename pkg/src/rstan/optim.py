"""Adam with an epoch-indexed step decay of the learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor


def decayed_lr(base_lr: float, epoch: int, gamma: float = 0.8, step_epochs: int = 10, recurring: bool = True) -> float:
    """Learning rate in effect during ``epoch`` (0-based).

    ``recurring=True`` multiplies by ``gamma`` at every ``step_epochs``
    boundary; ``False`` applies the factor once, from epoch ``step_epochs`` on.
    """
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    k = epoch // step_epochs if recurring else int(epoch >= step_epochs)
    return base_lr * gamma**k


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr: float = 2e-4
    gamma: float = 0.8
    step_epochs: int = 10
    recurring: bool = True
    epoch: int = 0

    @classmethod
    def zeros_like(cls, params, lr: float = 2e-4, **kw) -> "AdamState":
        shapes = [np.shape(p.data if isinstance(p, Tensor) else p) for p in params]
        return cls(
            first_moment=[np.zeros(s) for s in shapes],
            second_moment=[np.zeros(s) for s in shapes],
            learning_rate=lr,
            base_lr=lr,
            **kw,
        )

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch
        self.learning_rate = decayed_lr(self.base_lr, epoch, self.gamma, self.step_epochs, self.recurring)


def adam_step(params: list, grads: list, state: AdamState, names: list | None = None) -> None:
    """One bias-corrected Adam update, in place on ``params`` (arrays or Tensors).

    ``None`` gradients count as zero. A NaN/Inf gradient raises before any
    parameter is touched.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ContractError("params, grads and optimizer state differ in length")
    for i, g in enumerate(grads):
        if g is not None and not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise NumericError(f"non-finite gradient for parameter {label}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        arr = p.data if isinstance(p, Tensor) else p
        if g is None:
            g = np.zeros_like(arr)
        if np.shape(g) != arr.shape:
            raise ContractError(f"gradient shape {np.shape(g)} does not match parameter {arr.shape}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    """Stateful wrapper over :func:`adam_step` for a fixed parameter list."""

    def __init__(self, named_params, lr: float = 2e-4, gamma: float = 0.8, step_epochs: int = 10,
                 recurring: bool = True, betas=(0.9, 0.999), eps: float = 1e-8):
        named_params = list(named_params)
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.state = AdamState.zeros_like(
            self.params, lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps,
            gamma=gamma, step_epochs=step_epochs, recurring=recurring,
        )

    def set_epoch(self, epoch: int) -> None:
        self.state.set_epoch(epoch)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.names)
