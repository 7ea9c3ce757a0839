"""Differentiable neural-network operations on (N, C, T, H, W) volumes.

Unbatched (C, T, H, W) feature maps are accepted everywhere and returned
unbatched. Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward_rule,
    broadcast_to,
    matmul,
    max_axis,
    mean,
    mul,
    record,
    relu,  # noqa: F401  (re-exported)
    reshape,
    transpose,
)


def _triple(v, what="value"):
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ContractError(f"{what} must be an int or a 3-tuple, got {v}")
    return v


def conv_out_len(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def deconv_out_len(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s + k - 2 * p


def _batched(x: Tensor):
    if x.ndim == 5:
        return x, False
    if x.ndim == 4:
        return reshape(x, (1,) + x.shape), True
    raise DimensionError(f"expected a (C,T,H,W) or (N,C,T,H,W) volume, got shape {x.shape}")


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def _pad(arr, p, value=0.0):
    if not any(p):
        return arr
    width = ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2]))
    return np.pad(arr, width, constant_values=value)


def _crop(arr, p):
    t, h, w = arr.shape[2:]
    return arr[:, :, p[0] : t - p[0], p[1] : h - p[1], p[2] : w - p[2]]


# ---------------------------------------------------------------------------
# convolution

def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation.

    ``weight`` is ``(C_out, C_in, kt, kh, kw)``; output length per axis is
    ``floor((n + 2p - k) / s) + 1``.
    """
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    s, p = _triple(stride, "stride"), _triple(padding, "padding")
    if min(s) < 1 or min(p) < 0:
        raise ContractError(f"invalid stride {s} / padding {p}")
    if weight.ndim != 5:
        raise DimensionError(f"conv3d weight must be 5-D, got {weight.shape}")
    n, c, t, h, w = x.shape
    co, ci, kt, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv3d: input has {c} channels, weight expects {ci} (input {x.shape}, weight {weight.shape})")
    out_dims = tuple(conv_out_len(d, k, st, pd) for d, k, st, pd in zip((t, h, w), (kt, kh, kw), s, p))
    if min(out_dims) < 1:
        raise DimensionError(f"conv3d: non-positive output dims {out_dims} for input {x.shape}, kernel {weight.shape[2:]}")
    xp = _pad(x.data, p)
    cols = kernels.get_backend().im2col3d(xp, kt, kh, kw, *s, *out_dims)
    out = np.matmul(weight.data.reshape(co, -1), cols)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise DimensionError(f"conv3d bias shape {bias.shape} != ({co},)")
        out += bias.data[None, :, None]
        inputs.append(bias)
    out = out.reshape(n, co, *out_dims)
    y = record("conv3d", out, inputs, cols=cols, stride=s, padding=p, padded_shape=xp.shape, out_dims=out_dims)
    return _unbatch(y, squeeze)


@backward_rule("conv3d")
def _conv3d_bw(node, g):
    x, weight = node.inputs[:2]
    sv = node.saved
    co = weight.shape[0]
    n = g.shape[0]
    g2 = g.reshape(n, co, -1)
    gw = np.tensordot(g2, sv["cols"], axes=([0, 2], [0, 2])).reshape(weight.shape) if weight.requires_grad else None
    gx = None
    if x.requires_grad:
        dcols = np.matmul(weight.data.reshape(co, -1).T, g2)
        dxp = kernels.get_backend().col2im3d(dcols, sv["padded_shape"], *weight.shape[2:], *sv["stride"], *sv["out_dims"])
        gx = _crop(dxp, sv["padding"])
    grads = [gx, gw]
    if len(node.inputs) == 3:
        grads.append(g2.sum(axis=(0, 2)))
    return grads


def conv_transpose3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Transposed 3D convolution (the input-gradient of :func:`conv3d`).

    ``weight`` is ``(C_in, C_out, kt, kh, kw)``; output length per axis is
    ``(n - 1) * s + k - 2p``.
    """
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    s, p = _triple(stride, "stride"), _triple(padding, "padding")
    if min(s) < 1 or min(p) < 0:
        raise ContractError(f"invalid stride {s} / padding {p}")
    n, c, t, h, w = x.shape
    ci, co, kt, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv_transpose3d: input has {c} channels, weight expects {ci} (input {x.shape}, weight {weight.shape})")
    full = tuple(deconv_out_len(d, k, st, 0) for d, k, st in zip((t, h, w), (kt, kh, kw), s))
    out_dims = tuple(f - 2 * pd for f, pd in zip(full, p))
    if min(out_dims) < 1:
        raise DimensionError(f"conv_transpose3d: non-positive output dims {out_dims} for input {x.shape}")
    cols = np.matmul(weight.data.reshape(ci, -1).T, x.data.reshape(n, ci, -1))
    outp = kernels.get_backend().col2im3d(cols, (n, co) + full, kt, kh, kw, *s, t, h, w)
    out = np.ascontiguousarray(_crop(outp, p))
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise DimensionError(f"conv_transpose3d bias shape {bias.shape} != ({co},)")
        out += bias.data[None, :, None, None, None]
        inputs.append(bias)
    y = record("conv_transpose3d", out, inputs, stride=s, padding=p, in_dims=(t, h, w))
    return _unbatch(y, squeeze)


@backward_rule("conv_transpose3d")
def _conv_transpose3d_bw(node, g):
    x, weight = node.inputs[:2]
    sv = node.saved
    ci = weight.shape[0]
    n = g.shape[0]
    gp = _pad(g, sv["padding"])
    cols = kernels.get_backend().im2col3d(gp, *weight.shape[2:], *sv["stride"], *sv["in_dims"])
    gx = np.matmul(weight.data.reshape(ci, -1), cols).reshape(x.shape) if x.requires_grad else None
    gw = None
    if weight.requires_grad:
        gw = np.tensordot(x.data.reshape(n, ci, -1), cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    grads = [gx, gw]
    if len(node.inputs) == 3:
        grads.append(g.sum(axis=(0, 2, 3, 4)))
    return grads


def deconv3d_temporal(x, weight, bias=None, stride_t: int = 2, padding_t: int = 1) -> Tensor:
    """Temporal-only upsampling: transposed conv with a ``(k_t, 1, 1)`` kernel.

    Output length ``(t - 1) * stride_t + k_t - 2 * padding_t``.
    """
    weight = as_tensor(weight)
    if weight.ndim != 5 or weight.shape[3:] != (1, 1):
        raise ContractError(f"temporal deconvolution needs a (k_t, 1, 1) kernel, got {weight.shape[2:]}")
    t = as_tensor(x).shape[-3]
    n_out = deconv_out_len(t, weight.shape[2], stride_t, padding_t)
    if n_out < 1:
        raise DimensionError(f"temporal deconvolution of length {t} gives non-positive length {n_out}")
    return conv_transpose3d(x, weight, bias, stride=(stride_t, 1, 1), padding=(padding_t, 0, 0))


# ---------------------------------------------------------------------------
# pooling

def pool3d(x, kind: str, kernel, stride=None, padding=0) -> Tensor:
    """Window max or mean. Max pads with -inf; mean counts padded zeros."""
    x, squeeze = _batched(as_tensor(x))
    k = _triple(kernel, "kernel")
    s = k if stride is None else _triple(stride, "stride")
    p = _triple(padding, "padding")
    if min(k) < 1 or min(s) < 1 or min(p) < 0:
        raise DimensionError(f"invalid pooling window kernel={k} stride={s} padding={p}")
    if any(pd >= kk for pd, kk in zip(p, k)) and kind == "max":
        raise DimensionError(f"max-pool padding {p} must be smaller than kernel {k}")
    n, c = x.shape[:2]
    out_dims = tuple(conv_out_len(d, kk, st, pd) for d, kk, st, pd in zip(x.shape[2:], k, s, p))
    if min(out_dims) < 1:
        raise DimensionError(f"pooling window {k} does not fit input {x.shape} with padding {p}")
    be = kernels.get_backend()
    if kind == "max":
        xp = _pad(x.data, p, -np.inf)
        out, arg = be.maxpool3d_forward(xp, *k, *s, *out_dims)
        y = record("maxpool3d", out, (x,), arg=arg, kernel=k, stride=s, padding=p, padded_shape=xp.shape)
    elif kind == "avg":
        xp = _pad(x.data, p).reshape((n * c, 1) + tuple(d + 2 * pd for d, pd in zip(x.shape[2:], p)))
        cols = be.im2col3d(xp, *k, *s, *out_dims)
        out = cols.mean(axis=1).reshape(n, c, *out_dims)
        y = record("avgpool3d", out, (x,), kernel=k, stride=s, padding=p, padded_shape=xp.shape, out_dims=out_dims)
    else:
        raise ContractError(f"unknown pooling kind {kind!r}")
    return _unbatch(y, squeeze)


@backward_rule("maxpool3d")
def _maxpool_bw(node, g):
    sv = node.saved
    dxp = kernels.get_backend().maxpool3d_backward(g, sv["arg"], sv["padded_shape"], *sv["kernel"], *sv["stride"])
    return (_crop(dxp, sv["padding"]),)


@backward_rule("avgpool3d")
def _avgpool_bw(node, g):
    sv = node.saved
    (x,) = node.inputs
    ksz = int(np.prod(sv["kernel"]))
    nc = sv["padded_shape"][0]
    cols = np.broadcast_to((g / ksz).reshape(nc, 1, -1), (nc, ksz, g[0, 0].size))
    dxp = kernels.get_backend().col2im3d(np.ascontiguousarray(cols), sv["padded_shape"], *sv["kernel"], *sv["stride"], *sv["out_dims"])
    dxp = dxp.reshape(x.shape[:2] + dxp.shape[2:])
    return (_crop(dxp, sv["padding"]),)


def global_avg_pool(x) -> Tensor:
    """Mean over (T, H, W); returns (N, C) or (C,)."""
    x = as_tensor(x)
    return mean(x, axis=(-3, -2, -1))


# ---------------------------------------------------------------------------
# channel-axis primitives

def channel_pool(x):
    """Mean and max over the channel axis, each keeping a singleton channel."""
    x = as_tensor(x)
    if x.ndim not in (4, 5):
        raise DimensionError(f"channel_pool expects a 4-D or 5-D map, got {x.shape}")
    ax = x.ndim - 4
    return mean(x, axis=ax, keepdims=True), max_axis(x, ax, keepdims=True)


def channel_expand(m, c: int) -> Tensor:
    """Replicate a single-channel map ``c`` times along the channel axis."""
    m = as_tensor(m)
    if c < 1:
        raise ContractError(f"channel count must be >= 1, got {c}")
    ax = m.ndim - 4
    if m.ndim not in (4, 5) or m.shape[ax] != 1:
        raise DimensionError(f"channel_expand expects a single-channel map, got {m.shape}")
    shape = list(m.shape)
    shape[ax] = c
    return broadcast_to(m, tuple(shape))


# ---------------------------------------------------------------------------
# dense layers and normalization

def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input features {x.shape} do not match weight {weight.shape}")
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, -1)), transpose(weight)), (weight.shape[0],))
    else:
        y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)


def batchnorm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray, training: bool,
              momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, PyTorch convention); in eval mode
    the running buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batchnorm: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        count = x.data.size // x.shape[1]
        if count < 2:
            raise ContractError("batchnorm in training mode needs more than one value per channel")
        running_mean *= 1.0 - momentum
        running_mean += momentum * m
        running_var *= 1.0 - momentum
        running_var += momentum * v * count / (count - 1)
    else:
        m, v = running_mean, running_var
    inv_std = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    return record("batchnorm", out, (x, gamma, beta), xhat=xhat, inv_std=inv_std, training=training, axes=axes, bshape=bshape)


@backward_rule("batchnorm")
def _batchnorm_bw(node, g):
    x, gamma, _ = node.inputs
    sv = node.saved
    axes, bshape, xhat = sv["axes"], sv["bshape"], sv["xhat"]
    dbeta = g.sum(axis=axes)
    dgamma = (g * xhat).sum(axis=axes)
    scale = (gamma.data * sv["inv_std"]).reshape(bshape)
    if sv["training"]:
        count = x.data.size // x.shape[1]
        gx = scale / count * (count * g - dbeta.reshape(bshape) - xhat * dgamma.reshape(bshape))
    else:
        gx = g * scale
    return gx, dgamma, dbeta


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, ``mask / (1 - p)`` in training."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    rng = rng or np.random.default_rng()
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, mask)
