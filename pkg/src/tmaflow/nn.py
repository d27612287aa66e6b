"""Parameter containers and layers on top of :mod:`tmaflow.autodiff`."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Parameters are discovered from attributes in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def astype(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        return self

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, zero_init: bool = False, gain: float = 2.0,
                 bias: bool = True):
        shape = (cout, cin, k, k)
        if zero_init:
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, math.sqrt(gain / (cin * k * k)), size=shape)
        self.weight = ad.parameter(w)
        self.bias = ad.parameter(np.zeros((1, cout, 1, 1))) if bias else None
        self.stride = stride
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        y = ad.conv2d(x, self.weight, self.stride, self.padding)
        return y if self.bias is None else ad.add(y, self.bias)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False, gain: float = 1.0):
        if zero_init:
            w = np.zeros((din, dout))
        else:
            w = rng.normal(0.0, math.sqrt(gain / din), size=(din, dout))
        self.weight = ad.parameter(w)
        self.bias = ad.parameter(np.zeros(dout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return ad.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    """Zero-mean, unit-variance normalization over the last axis with a learned affine."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = ad.parameter(np.ones(dim))
        self.beta = ad.parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mu = ad.mean(x, axis=-1, keepdims=True)
        xc = ad.sub(x, mu)
        var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
        inv = ad.pow(ad.add(var, self.eps), -0.5)
        return ad.add(ad.mul(ad.mul(xc, inv), self.gamma), self.beta)


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the two spatial axes, no affine."""
    mu = ad.mean(x, axis=(-2, -1), keepdims=True)
    xc = ad.sub(x, mu)
    var = ad.mean(ad.mul(xc, xc), axis=(-2, -1), keepdims=True)
    return ad.mul(xc, ad.pow(ad.add(var, eps), -0.5))


NORMS = ("none", "instance")


class ResidualBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator,
                 norm: str = "none"):
        if norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")
        self.norm = norm
        bias = norm == "none"  # instance norm removes any per-channel offset
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, bias=bias)
        # damped second conv keeps unnormalized residual stacks well scaled
        self.conv2 = Conv2d(cout, cout, 3, rng, gain=1.0, bias=bias)
        self.shortcut = Conv2d(cin, cout, 1, rng, stride=stride, gain=1.0, bias=bias) \
            if (stride != 1 or cin != cout) else None

    def _norm(self, x: Tensor) -> Tensor:
        return instance_norm(x) if self.norm == "instance" else x

    def forward(self, x: Tensor) -> Tensor:
        y = ad.relu(self._norm(self.conv1(x)))
        y = self._norm(self.conv2(y))
        s = self._norm(self.shortcut(x)) if self.shortcut is not None else x
        return ad.relu(ad.add(s, y))


class Encoder(Module):
    """Residual encoder: one stride-2 stage per factor of two, two blocks each,
    then a 1x1 projection to ``out_dim``."""

    def __init__(self, cin: int, channels: tuple[int, ...], out_dim: int, factor: int,
                 rng: np.random.Generator, norm: str = "none"):
        stages = int(round(math.log2(factor)))
        if 2 ** stages != factor:
            raise ValueError(f"downsample factor must be a power of two, got {factor}")
        chans = list(channels) + [channels[-1]] * max(0, stages - len(channels))
        blocks = []
        prev = cin
        for s in range(stages):
            blocks.append(ResidualBlock(prev, chans[s], 2, rng, norm))
            blocks.append(ResidualBlock(chans[s], chans[s], 1, rng, norm))
            prev = chans[s]
        self.blocks = blocks
        self.proj = Conv2d(prev, out_dim, 1, rng, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return self.proj(x)
