"""Differentiable training losses."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateSignalError, DimensionError
from .tensor import Tensor, as_tensor, log_softmax, mean, mul, sqrt, sum_


def _zero_variance(v: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return v <= 1e-24 * np.maximum(scale, 1e-300)


def neg_pearson_loss(x, y, degenerate: str = "raise", reduction: str = "mean") -> Tensor:
    """1 - Pearson r between prediction ``x`` and target ``y``.

    Works on (T,) signals or (N, T) batches (one r per row; ``reduction``
    "mean" or "none"). Uses the raw-sum form

        r = (T Sxy - Sx Sy) / sqrt((T Sxx - Sx^2)(T Syy - Sy^2))

    on mean-removed copies of both signals. r is shift-invariant, so this
    changes nothing but the rounding: raw sums of a signal riding on a
    large offset cancel badly.

    ``degenerate="neutral"`` turns zero-variance rows into a constant loss of
    1 with zero gradient instead of raising :class:`DegenerateSignalError`.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"neg_pearson_loss: shapes differ {x.shape} vs {y.shape}")
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise ContractError(f"neg_pearson_loss needs (T,) or (N, T) with T >= 2, got {x.shape}")
    T = x.shape[-1]
    ex, ey = (x.data**2).sum(-1), (y.data**2).sum(-1)
    x = x - mean(x, axis=-1, keepdims=True)
    y = y - mean(y, axis=-1, keepdims=True)
    vx = T * (x.data**2).sum(-1) - x.data.sum(-1) ** 2
    vy = T * (y.data**2).sum(-1) - y.data.sum(-1) ** 2
    bad = _zero_variance(vx, T * ex) | _zero_variance(vy, T * ey)
    if np.any(bad):
        if degenerate != "neutral":
            raise DegenerateSignalError("Pearson correlation undefined for a zero-variance signal")
    good = ~np.atleast_1d(bad)

    sx = sum_(x, -1)
    sy = sum_(y, -1)
    sxy = sum_(mul(x, y), -1)
    sxx = sum_(mul(x, x), -1)
    syy = sum_(mul(y, y), -1)
    num = T * sxy - sx * sy
    den_sq = (T * sxx - sx * sx) * (T * syy - sy * sy)
    if not np.all(good):
        # Replace degenerate rows by a unit denominator and zero numerator via masks.
        mask = good.astype(float).reshape(num.shape)
        num = mul(num, mask)
        den_sq = den_sq * mask + (1.0 - mask)
    loss = 1.0 - num / sqrt(den_sq)
    # clamp roundoff excursions outside [0, 2] without touching the gradient
    loss = loss + (np.clip(loss.data, 0.0, 2.0) - loss.data)
    if reduction == "mean":
        return loss.mean() if loss.ndim else loss
    if reduction == "none":
        return loss
    raise ContractError(f"unknown reduction {reduction!r}")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels))
    single = logits.ndim == 1
    k = logits.shape[-1]
    n = 1 if single else logits.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must be integers in [0, {k}), got {labels.tolist()}")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    if single:
        onehot = onehot[0]
    return -(sum_(mul(log_softmax(logits, -1), onehot)) * (1.0 / n))
