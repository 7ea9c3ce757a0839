"""Sliding-window kernels behind conv3d, its transpose and 3D pooling.

Two interchangeable backends implement the same four functions:

``im2col3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo)``
    Unfold a padded ``(N, C, T, H, W)`` array into ``(N, C*K, To*Ho*Wo)``
    columns, row index ``((c*kt + a)*kh + i)*kw + j``.
``col2im3d(cols, padded_shape, ...)``
    Adjoint of ``im2col3d``: scatter-add columns back into a padded volume.
``maxpool3d_forward(xp, ...)``
    Window maxima plus the flat in-window index of the first maximum.
``maxpool3d_backward(g, arg, padded_shape, ...)``
    Route ``g`` to the recorded argmax positions.

The compiled backend (``_ckernels``) is used when it was built; otherwise the
numpy backend. Set ``RSTAN_KERNELS=python`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
    v = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    return v[:, :, : st * to : st, : sh * ho : sh, : sw * wo : sw]


class NumpyKernels:
    name = "python"

    @staticmethod
    def im2col3d(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
        n, c = xp.shape[:2]
        w = _windows(xp, kt, kh, kw, st, sh, sw, to, ho, wo)
        # (N, C, To, Ho, Wo, kt, kh, kw) -> (N, C, kt, kh, kw, To, Ho, Wo)
        w = w.transpose(0, 1, 5, 6, 7, 2, 3, 4)
        return np.ascontiguousarray(w).reshape(n, c * kt * kh * kw, to * ho * wo)

    @staticmethod
    def col2im3d(cols, padded_shape, kt, kh, kw, st, sh, sw, to, ho, wo):
        n, c = padded_shape[:2]
        out = np.zeros(padded_shape)
        cols = cols.reshape(n, c, kt, kh, kw, to, ho, wo)
        for a in range(kt):
            for i in range(kh):
                for j in range(kw):
                    out[:, :, a : a + st * to : st, i : i + sh * ho : sh, j : j + sw * wo : sw] += cols[:, :, a, i, j]
        return out

    @staticmethod
    def maxpool3d_forward(xp, kt, kh, kw, st, sh, sw, to, ho, wo):
        n, c = xp.shape[:2]
        w = _windows(xp, kt, kh, kw, st, sh, sw, to, ho, wo).reshape(n, c, to, ho, wo, kt * kh * kw)
        arg = w.argmax(axis=-1)
        out = np.take_along_axis(w, arg[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(out), arg.astype(np.int64)

    @staticmethod
    def maxpool3d_backward(g, arg, padded_shape, kt, kh, kw, st, sh, sw):
        to, ho, wo = g.shape[2:]
        out = np.zeros(padded_shape)
        k = 0
        for a in range(kt):
            for i in range(kh):
                for j in range(kw):
                    out[:, :, a : a + st * to : st, i : i + sh * ho : sh, j : j + sw * wo : sw] += np.where(arg == k, g, 0.0)
                    k += 1
        return out


class CythonKernels:
    name = "cython"

    def __init__(self, mod):
        self._mod = mod

    def im2col3d(self, xp, *args):
        return self._mod.im2col3d(np.ascontiguousarray(xp, dtype=np.float64), *args)

    def col2im3d(self, cols, padded_shape, *args):
        return self._mod.col2im3d(np.ascontiguousarray(cols, dtype=np.float64), tuple(padded_shape), *args)

    def maxpool3d_forward(self, xp, *args):
        return self._mod.maxpool3d_forward(np.ascontiguousarray(xp, dtype=np.float64), *args)

    def maxpool3d_backward(self, g, arg, padded_shape, *args):
        return self._mod.maxpool3d_backward(
            np.ascontiguousarray(g, dtype=np.float64),
            np.ascontiguousarray(arg, dtype=np.int64),
            tuple(padded_shape),
            *args,
        )


def _load_compiled():
    try:
        from . import _ckernels
    except ImportError:
        return None
    return CythonKernels(_ckernels)


python_backend = NumpyKernels()
compiled_backend = _load_compiled()

if os.environ.get("RSTAN_KERNELS", "").lower() == "python" or compiled_backend is None:
    backend = python_backend
else:
    backend = compiled_backend


def available_backends() -> dict:
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out


def use_backend(name: str):
    """Switch the process-wide kernel backend; returns the previous one."""
    global backend
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(backends)}")
    prev = backend
    backend = backends[name]
    return prev


def get_backend():
    return backend
