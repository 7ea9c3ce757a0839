"""Parameter containers and the I3D building blocks built on them."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .errors import ContractError
from .tensor import Tensor, concat


class Module:
    """Minimal module tree: tensor attributes are parameters, numpy arrays
    registered with :meth:`register_buffer` are buffers, and Module /
    list-of-Module attributes are children. Names join with dots."""

    training = True

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        self.__dict__.setdefault("_buffers", {})[name] = arr

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for k, v in self.__dict__.items():
            if isinstance(v, Module):
                yield k, v
            elif isinstance(v, (list, tuple)) and v and all(isinstance(m, Module) for m in v):
                for i, m in enumerate(v):
                    yield f"{k}{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, v in self.__dict__.items():
            if isinstance(v, Tensor):
                yield prefix + k, v
        for k, m in self._children():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, v in self.__dict__.get("_buffers", {}).items():
            yield prefix + k, v
        for k, m in self._children():
            yield from m.named_buffers(prefix + k + ".")

    def state_dict(self) -> dict:
        out = {n: p.data.copy() for n, p in self.named_parameters()}
        out.update({n: b.copy() for n, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        targets = {n: p.data for n, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        unexpected = set(state) - set(targets)
        if strict and (missing or unexpected):
            raise ContractError(f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, arr in state.items():
            if name not in targets:
                continue
            dst = targets[name]
            if dst.shape != np.shape(arr):
                raise ContractError(f"shape mismatch for {name}: {dst.shape} vs {np.shape(arr)}")
            dst[...] = arr

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, m in self._children():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv3d(Module):
    def __init__(self, cin, cout, kernel=1, stride=1, padding=0, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        k = F._triple(kernel, "kernel")
        self.weight = Tensor(he_uniform(rng, (cout, cin) + k, cin * int(np.prod(k))), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None
        self.stride, self.padding = F._triple(stride), F._triple(padding)

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, shape):
        c, *dims = shape
        k = self.weight.shape[2:]
        return (self.weight.shape[0],) + tuple(
            F.conv_out_len(d, kk, s, p) for d, kk, s, p in zip(dims, k, self.stride, self.padding)
        )


class ConvTranspose3d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        k = F._triple(kernel, "kernel")
        self.weight = Tensor(he_uniform(rng, (cin, cout) + k, cin * int(np.prod(k))), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None
        self.stride, self.padding = F._triple(stride), F._triple(padding)

    def forward(self, x):
        return F.conv_transpose3d(x, self.weight, self.bias, self.stride, self.padding)

    def out_shape(self, shape):
        c, *dims = shape
        k = self.weight.shape[2:]
        return (self.weight.shape[1],) + tuple(
            F.deconv_out_len(d, kk, s, p) for d, kk, s, p in zip(dims, k, self.stride, self.padding)
        )


class BatchNorm(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(c))
        self.register_buffer("running_var", np.ones(c))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        b = self._buffers
        return F.batchnorm(x, self.gamma, self.beta, b["running_mean"], b["running_var"],
                           self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, fin, fout, bias=True, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(he_uniform(rng, (fout, fin), fin), requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Pool3d(Module):
    def __init__(self, kind, kernel, stride=None, padding=0):
        self.kind = kind
        self.kernel = F._triple(kernel)
        self.stride = self.kernel if stride is None else F._triple(stride)
        self.padding = F._triple(padding)

    def forward(self, x):
        return F.pool3d(x, self.kind, self.kernel, self.stride, self.padding)

    def out_shape(self, shape):
        c, *dims = shape
        return (c,) + tuple(
            F.conv_out_len(d, k, s, p) for d, k, s, p in zip(dims, self.kernel, self.stride, self.padding)
        )


class Unit3D(Module):
    """conv (no bias) -> batchnorm -> ReLU, the I3D unit."""

    def __init__(self, cin, cout, kernel=1, stride=1, padding=0, rng=None):
        self.conv = Conv3d(cin, cout, kernel, stride, padding, bias=False, rng=rng)
        self.bn = BatchNorm(cout)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))

    def out_shape(self, shape):
        return self.conv.out_shape(shape)


class InceptionBlock(Module):
    """Four parallel branches concatenated on channels:
    1x1x1 | 1x1x1 -> 3x3x3 | 1x1x1 -> 3x3x3 | maxpool 3x3x3 -> 1x1x1.

    ``widths`` is ``(b0, b1a, b1b, b2a, b2b, b3)``, the I3D convention.
    """

    def __init__(self, cin, widths, rng=None):
        if len(widths) != 6:
            raise ContractError(f"inception widths need 6 entries, got {widths}")
        b0, b1a, b1b, b2a, b2b, b3 = widths
        self.b0 = Unit3D(cin, b0, 1, rng=rng)
        self.b1a = Unit3D(cin, b1a, 1, rng=rng)
        self.b1b = Unit3D(b1a, b1b, 3, padding=1, rng=rng)
        self.b2a = Unit3D(cin, b2a, 1, rng=rng)
        self.b2b = Unit3D(b2a, b2b, 3, padding=1, rng=rng)
        self.b3pool = Pool3d("max", 3, 1, 1)
        self.b3 = Unit3D(cin, b3, 1, rng=rng)
        self.cout = b0 + b1b + b2b + b3

    def forward(self, x):
        ax = x.ndim - 4
        return concat(
            [self.b0(x), self.b1b(self.b1a(x)), self.b2b(self.b2a(x)), self.b3(self.b3pool(x))],
            axis=ax,
        )

    def out_shape(self, shape):
        return (self.cout,) + tuple(shape[1:])
