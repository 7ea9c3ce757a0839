"""Spatio-temporal attention (STA), rPPG-guided feature enrichment (VFE) and
the residual enrichment that combines them.

Shapes follow the feature-map convention (N, C, T, H, W); unbatched
(C, T, H, W) maps work too.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .errors import ConfigError, DimensionError
from .layers import Conv3d, Module
from .tensor import Tensor, add, as_tensor, concat, matmul, mul, reshape, softmax, transpose


class STA(Module):
    """All-pairs attention over the n = t*h*w positions of a feature map.

    theta, phi and g embed C channels into ``embed`` channels (default C/2);
    h maps back to C. With ``residual=True`` the block returns
    ``x + h(A g(x))``, otherwise the bare ``h(A g(x))``.
    """

    def __init__(self, channels: int, embed: int | None = None, residual: bool = True, rng=None):
        embed = embed or max(channels // 2, 1)
        rng = rng or np.random.default_rng(0)
        self.theta = Conv3d(channels, embed, 1, rng=rng)
        self.phi = Conv3d(channels, embed, 1, rng=rng)
        self.g = Conv3d(channels, embed, 1, rng=rng)
        self.h = Conv3d(embed, channels, 1, rng=rng)
        self.residual = residual

    def forward(self, x):
        return sta_forward(x, self)


def _flat_positions(y: Tensor) -> Tensor:
    n, c = y.shape[:2]
    return reshape(y, (n, c, -1))


def attention_map(x, p: STA) -> Tensor:
    """Row-softmax of theta(x)^T phi(x): (N, n, n), rows sum to one."""
    x, squeeze = F._batched(x)
    th = _flat_positions(p.theta(x))
    ph = _flat_positions(p.phi(x))
    if th.shape[1] != ph.shape[1]:
        raise ConfigError(f"theta and phi embed to different sizes: {th.shape[1]} vs {ph.shape[1]}")
    a = softmax(matmul(transpose(th, (0, 2, 1)), ph), axis=-1)
    return reshape(a, a.shape[1:]) if squeeze else a


def sta_forward(x_v, p: STA) -> Tensor:
    x_v, squeeze = F._batched(x_v)
    n, c, t, h, w = x_v.shape
    if p.h.weight.shape[0] != c:
        raise ConfigError(f"STA output projection gives {p.h.weight.shape[0]} channels, input has {c}")
    a = attention_map(x_v, p)
    gx = _flat_positions(p.g(x_v))
    y = matmul(a, transpose(gx, (0, 2, 1)))  # (N, n, c')
    y = reshape(transpose(y, (0, 2, 1)), (n, gx.shape[1], t, h, w))
    z = p.h(y)
    out = add(x_v, z) if p.residual else z
    return F._unbatch(out, squeeze)


class VFE(Module):
    """f1: C -> C 1x1x1 embedding of the rPPG map; f_st: 2 -> 1 channel condenser."""

    def __init__(self, channels: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.f1 = Conv3d(channels, channels, 1, rng=rng)
        self.f_st = Conv3d(2, 1, 1, rng=rng)

    def forward(self, x_r, z_v):
        return vfe_forward(x_r, z_v, self)


def temporal_attention(x_r, p: VFE) -> Tensor:
    """The channel-expanded temporal attention map M (same shape as ``x_r``).

    M_st = f_st([avg_c f1(x_r), max_c f1(x_r)]), softmaxed over time
    independently at every spatial position, then replicated over channels.
    """
    x_r = as_tensor(x_r)
    e = p.f1(x_r)
    p_avg, p_max = F.channel_pool(e)
    ax = e.ndim - 4
    m_st = p.f_st(concat([p_avg, p_max], axis=ax))
    m_t = softmax(m_st, axis=ax + 1)
    return F.channel_expand(m_t, x_r.shape[ax])


def vfe_forward(x_r, z_v, p: VFE, return_map: bool = False):
    """F = z_v * M; with ``return_map`` also returns M."""
    if tuple(x_r.shape) != tuple(z_v.shape):
        raise DimensionError(f"VFE branch shapes differ: x_r {tuple(x_r.shape)} vs z_v {tuple(z_v.shape)}")
    m = temporal_attention(x_r, p)
    f = mul(z_v, m)
    return (f, m) if return_map else f


def enrich(f, z_v) -> Tensor:
    """F_e = F + Z_v."""
    if tuple(f.shape) != tuple(z_v.shape):
        raise DimensionError(f"enrich: shapes differ {tuple(f.shape)} vs {tuple(z_v.shape)}")
    return add(f, z_v)
