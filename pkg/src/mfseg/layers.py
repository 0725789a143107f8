"""Parameterized layers on top of the autodiff engine.

A tiny module system: ``Module`` auto-registers child modules and
parameter tensors assigned as attributes, and exposes flat name->array
views used by the optimizer and the checkpoint container.

Weight initialization is a fan-in-scaled normal draw (std = sqrt(2/fan_in))
from the generator handed to the constructor; biases start at zero,
batch-norm at gamma=1/beta=0. Construction order is fixed, so a given
seed always yields identical parameters.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DTYPE = np.float32


class ForwardCtx:
    """Per-forward-pass context: training flag and the RNG feeding dropout."""

    __slots__ = ("training", "rng")

    def __init__(self, training: bool = False, rng: np.random.Generator | None = None):
        self.training = training
        self.rng = rng


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, ModuleList):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(array, dtype=DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        a = np.asarray(array, dtype=DTYPE)
        self._buffers[name] = a
        return a

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for cname, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{cname}."))
        return out

    def load_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name][...] = array

    def __call__(self, x: Tensor, ctx: ForwardCtx) -> Tensor:
        return self.forward(x, ctx)

    def forward(self, x: Tensor, ctx: ForwardCtx) -> Tensor:
        raise NotImplementedError


class ModuleList:
    """Ordered child-module container (indexable, iterable)."""

    def __init__(self, modules=()):
        self._modules = list(modules)

    def append(self, m: Module):
        self._modules.append(m)

    def __iter__(self):
        return iter(self._modules)

    def __getitem__(self, i):
        return self._modules[i]

    def __len__(self):
        return len(self._modules)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, m in enumerate(self._modules):
            out.update(m.named_parameters(f"{prefix}{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, m in enumerate(self._modules):
            out.update(m.named_buffers(f"{prefix}{i}."))
        return out


def _normal_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, dilation=1, bias=True):
        super().__init__()
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.w = self.add_param("w", _normal_fan_in(rng, (cout, cin, k, k), cin * k * k))
        self.b = self.add_param("b", np.zeros(cout)) if bias else None

    def forward(self, x, ctx):
        return ad.conv2d(x, self.w, self.b, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    """4x4 stride-2 padding-1 transposed convolution: exact 2x upsampling."""

    def __init__(self, cin, cout, rng, k=4, stride=2, padding=1, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.w = self.add_param("w", _normal_fan_in(rng, (cin, cout, k, k), cin * k * k))
        self.b = self.add_param("b", np.zeros(cout)) if bias else None

    def forward(self, x, ctx):
        return ad.conv_transpose2d(x, self.w, self.b, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def forward(self, x, ctx):
        return ad.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, ctx.training, self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = float(rate)

    def forward(self, x, ctx):
        if not ctx.training or self.rate == 0.0:
            return x
        if ctx.rng is None:
            raise ValueError("training-mode forward with dropout requires an RNG")
        return ad.dropout(x, self.rate, ctx.rng)


class ConvBnRelu(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, dilation=1):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, rng, stride, padding, dilation, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x, ctx):
        return ad.relu(self.bn(self.conv(x, ctx), ctx))
