"""Layers, parameter initialisation and optimizers."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterable, Mapping

import numpy as np

from alps import tensor as T
from alps.tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_params(shape, scheme: str = "kaiming-uniform", seed=0, *, fan_in: int | None = None,
                bounds: tuple[float, float] = (0.0, 0.0), dtype=T.DEFAULT_DTYPE) -> Tensor:
    """Create a trainable tensor.

    ``kaiming-uniform`` samples U(-b, b) with b = sqrt(6 / fan_in); ``fan_in``
    defaults to the product of all dimensions after the first.  ``uniform``
    samples U(bounds[0], bounds[1]).  ``seed`` may be an int or a Generator.
    """
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ValueError(f"dimensions must be positive, got {shape}")
    rng = _rng(seed)
    if scheme == "kaiming-uniform":
        if fan_in is None:
            fan_in = math.prod(shape[1:]) if len(shape) > 1 else shape[0]
        bound = math.sqrt(6.0 / fan_in)
        values = rng.uniform(-bound, bound, size=shape)
    elif scheme == "uniform":
        lo, hi = bounds
        values = np.full(shape, lo) if lo == hi else rng.uniform(lo, hi, size=shape)
    elif scheme == "zeros":
        values = np.zeros(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return Tensor(values.astype(dtype), requires_grad=True)


class Module:
    """Collects parameters listed in ``param_names`` plus those of child modules, in attribute order."""

    param_names: tuple[str, ...] = ()

    def named_parameters(self, prefix: str = "") -> OrderedDict[str, Tensor]:
        params: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in vars(self).items():
            if name in self.param_names:
                params[prefix + name] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    param_names = ("weight", "bias")

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 2, padding: int = 1,
                 rng=0, dtype=T.DEFAULT_DTYPE):
        self.stride, self.padding = stride, padding
        self.weight = init_params((out_ch, in_ch, kernel, kernel), "kaiming-uniform", rng, dtype=dtype)
        self.bias = init_params((out_ch,), "zeros", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    param_names = ("weight", "bias")

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 4, stride: int = 2, padding: int = 1,
                 rng=0, dtype=T.DEFAULT_DTYPE):
        self.stride, self.padding = stride, padding
        # each output pixel sees in_ch * (kernel / stride)^2 inputs
        fan_in = max(1, in_ch * (kernel // stride) ** 2)
        self.weight = init_params((in_ch, out_ch, kernel, kernel), "kaiming-uniform", rng,
                                  fan_in=fan_in, dtype=dtype)
        self.bias = init_params((out_ch,), "zeros", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding)


class Dense(Module):
    param_names = ("weight", "bias")

    def __init__(self, in_features: int, out_features: int, rng=0, dtype=T.DEFAULT_DTYPE):
        self.weight = init_params((in_features, out_features), "kaiming-uniform", rng,
                                  fan_in=in_features, dtype=dtype)
        self.bias = init_params((out_features,), "zeros", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return T.dense(x, self.weight, self.bias)


def zero_grads(params: Mapping[str, Tensor] | Iterable[Tensor]) -> None:
    for p in _values(params):
        p.zero_grad()


def _values(params) -> list[Tensor]:
    return list(params.values()) if isinstance(params, Mapping) else list(params)


def _sign(direction: str) -> float:
    if direction == "descent":
        return 1.0
    if direction == "ascent":
        return -1.0
    raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")


def _grads(params: Mapping[str, Tensor]) -> list[np.ndarray]:
    out = []
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
        out.append(p.grad)
    return out


class SGD:
    kind = "sgd"

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-2):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = OrderedDict(params)
        self.lr = lr
        self.t = 0

    def step(self, direction: str = "descent") -> None:
        sign = _sign(direction)
        for p, g in zip(self.params.values(), _grads(self.params)):
            p.data -= (sign * self.lr) * g
        self.t += 1


class Adam:
    """Adam with bias correction; ``ascent`` negates the gradient before the update."""

    kind = "adam"

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = OrderedDict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, direction: str = "descent") -> None:
        sign = _sign(direction)
        grads = _grads(self.params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (k, p), g in zip(self.params.items(), grads):
            g = sign * g
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")
