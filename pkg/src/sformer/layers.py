"""Parameterized layer wrappers over the autodiff primitives.

Each layer registers its parameters under a dotted name prefix at
construction time, so the registry's insertion order (and therefore the
seeded initialization stream) is fixed by the model build order.

Initialization: Kaiming-uniform for conv/linear weights, zeros for biases,
ones/zeros for layer-norm affine pairs.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterRegistry, Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d:
    def __init__(self, reg: ParameterRegistry, name: str, cin: int, cout: int,
                 k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.w = reg.add(f"{name}.w", kaiming_uniform(rng, (cout, cin, k, k), cin * k * k))
        self.b = reg.add(f"{name}.b", np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ConvTranspose2d:
    def __init__(self, reg: ParameterRegistry, name: str, cin: int, cout: int,
                 rng: np.random.Generator, k: int = 2):
        self.k = k
        self.w = reg.add(f"{name}.w", kaiming_uniform(rng, (cin, cout, k, k), cin * k * k))
        self.b = reg.add(f"{name}.b", np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.w, self.b, stride=self.k)


class Linear:
    def __init__(self, reg: ParameterRegistry, name: str, din: int, dout: int,
                 rng: np.random.Generator):
        self.w = reg.add(f"{name}.w", kaiming_uniform(rng, (dout, din), din))
        self.b = reg.add(f"{name}.b", np.zeros(dout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.w, self.b)


class LayerNorm:
    """Affine layer norm; `shape` is the broadcast shape of gamma/beta."""

    def __init__(self, reg: ParameterRegistry, name: str, shape, axes=(-1,),
                 eps: float = 1e-5):
        self.axes = axes
        self.eps = eps
        self.gamma = reg.add(f"{name}.g", np.ones(shape, dtype=np.float32))
        self.beta = reg.add(f"{name}.b", np.zeros(shape, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, axes=self.axes, eps=self.eps)


class DepthwiseConv2d:
    """3x3 depthwise conv with a channel multiplier (see autodiff op)."""

    def __init__(self, reg: ParameterRegistry, name: str, channels: int,
                 rng: np.random.Generator, multiplier: int = 2):
        mc = channels * multiplier
        self.w = reg.add(f"{name}.w", kaiming_uniform(rng, (mc, 3, 3), 9))
        self.b = reg.add(f"{name}.b", np.zeros(mc, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.depthwise_conv2d(x, self.w, self.b)


class ConvBlock:
    """Two 3x3 convs with ReLU after each — the encoder/decoder workhorse."""

    def __init__(self, reg: ParameterRegistry, name: str, cin: int, cout: int,
                 rng: np.random.Generator):
        self.conv1 = Conv2d(reg, f"{name}.conv1", cin, cout, 3, rng, padding=1)
        self.conv2 = Conv2d(reg, f"{name}.conv2", cout, cout, 3, rng, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(self.conv2(ad.relu(self.conv1(x))))


class EncoderBranch:
    """Four conv blocks, 2x2 max pool between stages, channels doubling.

    Returns the pre-pool feature of every stage (the skip tensors) plus the
    post-pool bottleneck feature.
    """

    def __init__(self, reg: ParameterRegistry, name: str, in_channels: int,
                 base_width: int, rng: np.random.Generator):
        self.blocks = []
        cin = in_channels
        for i in range(4):
            cout = base_width * (2 ** i)
            self.blocks.append(ConvBlock(reg, f"{name}.stage{i + 1}", cin, cout, rng))
            cin = cout

    def __call__(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
            x = ad.max_pool2d(x)
        return skips, x
