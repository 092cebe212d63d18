"""Parameter containers: a small module system over :mod:`rcmnet.tensor`."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Ordered container of parameters, buffers and child modules.

    Attributes assigned as :class:`Tensor` become parameters, attributes
    assigned as :class:`Module` become children; registration order fixes
    the dotted parameter names and checkpoint order.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for mname, m in self._modules.items():
            yield from m.named_parameters(prefix + mname + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for mname, m in self._modules.items():
            yield from m.named_buffers(prefix + mname + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for mname, m in self._modules.items():
            yield from m.named_modules(prefix + mname + ".")

    def state_items(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Parameters and buffers as arrays, module by module."""
        for name, p in self._params.items():
            yield prefix + name, p.data
        for name, b in self._buffers.items():
            yield prefix + name, b
        for mname, m in self._modules.items():
            yield from m.state_items(prefix + mname + ".")

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_normal(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, bias=False, dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = kaiming_normal(rng, (cout, cin, k, k), cin * k * k, dtype)
        if bias:
            self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float64, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm2d(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator, dtype=np.float64, bias: bool = True):
        super().__init__()
        self.weight = Tensor(rng.normal(0.0, np.sqrt(1.0 / din), size=(dout, din)).astype(dtype),
                             requires_grad=True)
        if bias:
            self.bias = Tensor(np.zeros(dout, dtype=dtype), requires_grad=True)
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Sequential(Module):
    """Children named "0", "1", ... run in order."""

    def __init__(self, *mods: Module):
        super().__init__()
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self):
        return len(self._modules)

    def __getitem__(self, i: int) -> Module:
        return self._modules[str(i)]

    def forward(self, x):
        for m in self:
            x = m(x)
        return x


def set_requires_grad(module: Module, flag: bool, names: Optional[set] = None) -> None:
    for name, p in module.named_parameters():
        if names is None or name in names:
            p.requires_grad = flag
