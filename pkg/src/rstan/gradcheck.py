"""Central-difference gradient checking against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_checks: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backward() and central differences.

    ``f(*inputs)`` must return a scalar tensor. Every input with
    ``requires_grad`` is checked; with ``max_checks`` only that many
    coordinates per input are sampled (with ``rng``) instead of all of them.
    The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    out = f(*inputs)
    backward(out)
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            coords = rng.choice(flat.size, size=max_checks, replace=False)
        for k in coords:
            orig = flat[k]
            try:
                with no_grad():
                    flat[k] = orig + eps
                    fp = f(*inputs).item()
                    flat[k] = orig - eps
                    fm = f(*inputs).item()
            except Exception as e:
                raise type(e)(f"{e} [grad_check: input {i}, flat index {int(k)}]") from e
            finally:
                flat[k] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, _relative_error(float(analytic.reshape(-1)[k]), numeric))
    return worst
