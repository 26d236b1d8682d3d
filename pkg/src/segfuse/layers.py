"""Small composite layers shared by the backbone and the fusion module."""

from __future__ import annotations

import math

import numpy as np

from .ops import BatchNormParams, ConvParams, batch_norm, conv2d, make_batch_norm, relu
from .tensor import Tensor


def init_conv(rng: np.random.Generator, cin: int, cout: int, k: int, stride: int = 1,
              padding: int | None = None, bias: bool = True) -> ConvParams:
    """Fan-in-scaled uniform weights U(-b, b) with b = 1/sqrt(Ci*kh*kw); zero bias."""
    if padding is None:
        padding = k // 2
    bound = 1.0 / math.sqrt(cin * k * k)
    w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
    b = Tensor(np.zeros(cout), requires_grad=True) if bias else None
    return ConvParams(Tensor(w, requires_grad=True), b, stride=stride, padding=padding)


class ConvBn:
    """conv -> optional BN -> optional ReLU, in that fixed order."""

    def __init__(self, rng, cin, cout, k, stride=1, padding=None,
                 use_bn=True, use_relu=True, bias=True):
        self.conv = init_conv(rng, cin, cout, k, stride=stride, padding=padding, bias=bias)
        self.bn = make_batch_norm(cout) if use_bn else None
        self.use_relu = use_relu

    def forward(self, x: Tensor, mode: str) -> Tensor:
        y = conv2d(x, self.conv)
        if self.bn is not None:
            self.bn.mode = mode
            y = batch_norm(y, self.bn)
        if self.use_relu:
            y = relu(y)
        return y

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.conv.weight", self.conv.weight)]
        if self.conv.bias is not None:
            out.append((f"{prefix}.conv.bias", self.conv.bias))
        if self.bn is not None:
            out.append((f"{prefix}.bn.gamma", self.bn.gamma))
            out.append((f"{prefix}.bn.beta", self.bn.beta))
        return out

    def state(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        if self.bn is None:
            return []
        return [
            (f"{prefix}.bn.running_mean", self.bn.running_mean),
            (f"{prefix}.bn.running_var", self.bn.running_var),
            (f"{prefix}.bn.batches", np.array([float(self.bn.batches_tracked)])),
        ]

    def load_state(self, prefix: str, entries: dict[str, np.ndarray]) -> None:
        if self.bn is None:
            return
        self.bn.running_mean = entries[f"{prefix}.bn.running_mean"].copy()
        self.bn.running_var = entries[f"{prefix}.bn.running_var"].copy()
        self.bn.batches_tracked = int(entries[f"{prefix}.bn.batches"][0])


class ResBlock:
    """Two 3x3 conv-BN-ReLU units with an identity skip: y = x + f(x)."""

    def __init__(self, rng, channels):
        self.a = ConvBn(rng, channels, channels, 3)
        self.b = ConvBn(rng, channels, channels, 3)

    def forward(self, x: Tensor, mode: str) -> Tensor:
        return x + self.b.forward(self.a.forward(x, mode), mode)

    def params(self, prefix):
        return self.a.params(f"{prefix}.a") + self.b.params(f"{prefix}.b")

    def state(self, prefix):
        return self.a.state(f"{prefix}.a") + self.b.state(f"{prefix}.b")

    def load_state(self, prefix, entries):
        self.a.load_state(f"{prefix}.a", entries)
        self.b.load_state(f"{prefix}.b", entries)


def conv_cost(cin: int, cout: int, k: int, ho: int, wo: int, bias: bool = True) -> tuple[int, int]:
    """(params, flops) for one conv under the 1 MAC = 2 FLOPs convention,
    with one extra add per output element when a bias is present."""
    params = cout * cin * k * k + (cout if bias else 0)
    macs = cout * ho * wo * cin * k * k
    flops = 2 * macs + (cout * ho * wo if bias else 0)
    return params, flops


def bn_relu_cost(channels: int, ho: int, wo: int, use_relu: bool = True) -> tuple[int, int]:
    """BN params are gamma+beta; BN and ReLU each cost 1 FLOP per element."""
    elems = channels * ho * wo
    return 2 * channels, elems + (elems if use_relu else 0)
