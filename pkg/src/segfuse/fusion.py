"""Multi-scale fusion over a low-resolution feature map.

A pyramid of average-pooled branches (window = stride = scale) plus one
global-mean branch is compressed to branch_channels with 1x1 convs, fused
coarse-to-fine, concatenated, compressed to out_channels, and summed with
a 1x1 shortcut of the input.

Connection modes:
  interval - z_i fuses the branch two steps coarser (i+2), forming two
             interleaved chains over even and odd branch indices, so the
             finest branches pass through the most 3x3 convolutions.
  cascade  - z_i fuses the adjacent coarser branch (i+1).
  none     - branches are concatenated without fusion convs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import ConvBn, bn_relu_cost, conv_cost
from .ops import avg_pool2d, bilinear_upsample, concat_channels, conv2d, global_avg_pool
from .tensor import Tensor

GLOBAL = "global"

_MODES = ("interval", "cascade", "none")


@dataclass
class LmfmConfig:
    """Scales are downsample factors, strictly increasing from 1, with the
    global-pool marker last (e.g. (1, 2, 4, "global"))."""

    in_channels: int
    branch_channels: int
    out_channels: int
    scales: tuple = (1, 2, 4, GLOBAL)
    connection_mode: str = "interval"

    def __post_init__(self):
        if self.in_channels < 1 or self.branch_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        scales = tuple(self.scales)
        if len(scales) == 0:
            raise ValueError("scales must not be empty")
        if scales[-1] != GLOBAL:
            raise ValueError(f"last scale must be {GLOBAL!r}")
        finite = scales[:-1]
        if len(finite) == 0 or finite[0] != 1:
            raise ValueError("scales must start with factor 1")
        if any(not isinstance(s, int) for s in finite):
            raise ValueError("finite scales must be integers")
        if any(b <= a for a, b in zip(finite, finite[1:])):
            raise ValueError("scales must be strictly increasing")
        if self.connection_mode not in _MODES:
            raise ValueError(f"connection_mode must be one of {_MODES}")
        if self.connection_mode == "interval" and len(scales) < 3:
            raise ValueError("interval mode needs at least 3 branches")
        self.scales = scales

    @property
    def num_branches(self) -> int:
        return len(self.scales)

    @property
    def max_finite_scale(self) -> int:
        return self.scales[-2] if len(self.scales) > 1 else 1

    def fused_indices(self) -> list[int]:
        """Branch indices that get a 3x3 fusion conv, coarse to fine."""
        last = self.num_branches - 1
        if self.connection_mode == "interval":
            return list(range(last - 2, -1, -1))
        if self.connection_mode == "cascade":
            return list(range(last - 1, -1, -1))
        return []


class LmfmParams:
    """Parameter container built by :func:`init_lmfm`."""

    def __init__(self, cfg: LmfmConfig, rng: np.random.Generator):
        self.cfg = cfg
        cin, cb = cfg.in_channels, cfg.branch_channels
        self.branches = [ConvBn(rng, cin, cb, 1) for _ in cfg.scales]
        self.fuse = {i: ConvBn(rng, cb, cb, 3) for i in cfg.fused_indices()}
        self.compress = ConvBn(rng, cb * cfg.num_branches, cfg.out_channels, 1,
                               use_bn=False, use_relu=False)
        self.shortcut = ConvBn(rng, cin, cfg.out_channels, 1, use_bn=False, use_relu=False)

    def params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, b in enumerate(self.branches):
            out += b.params(f"{prefix}.branch{i}")
        for i in sorted(self.fuse):
            out += self.fuse[i].params(f"{prefix}.fuse{i}")
        out += self.compress.params(f"{prefix}.compress")
        out += self.shortcut.params(f"{prefix}.shortcut")
        return out

    def state(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, b in enumerate(self.branches):
            out += b.state(f"{prefix}.branch{i}")
        for i in sorted(self.fuse):
            out += self.fuse[i].state(f"{prefix}.fuse{i}")
        return out

    def load_state(self, prefix: str, entries: dict[str, np.ndarray]) -> None:
        for i, b in enumerate(self.branches):
            b.load_state(f"{prefix}.branch{i}", entries)
        for i in sorted(self.fuse):
            self.fuse[i].load_state(f"{prefix}.fuse{i}", entries)


def init_lmfm(cfg: LmfmConfig, rng: np.random.Generator) -> LmfmParams:
    return LmfmParams(cfg, rng)


def _branch_sizes(cfg: LmfmConfig, h: int, w: int) -> list[tuple[int, int]]:
    sizes = []
    for s in cfg.scales:
        if s == GLOBAL:
            sizes.append((1, 1))
        else:
            sizes.append((h // s, w // s))
    return sizes


def lmfm_forward(x: Tensor, cfg: LmfmConfig, params: LmfmParams, mode: str = "train") -> Tensor:
    """Fuse multi-scale context into a same-resolution map of out_channels."""
    if x.ndim != 4:
        raise ValueError(f"input must be [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ValueError(f"channel mismatch: input has {c}, config expects {cfg.in_channels}")
    ms = cfg.max_finite_scale
    if h % ms != 0 or w % ms != 0:
        raise ValueError(f"spatial extents {h}x{w} not divisible by largest finite scale {ms}")

    sizes = _branch_sizes(cfg, h, w)
    b = []
    for i, s in enumerate(cfg.scales):
        if s == GLOBAL:
            pooled = global_avg_pool(x)
        elif s == 1:
            pooled = x
        else:
            pooled = avg_pool2d(x, s, s)
        b.append(params.branches[i].forward(pooled, mode))

    last = cfg.num_branches - 1
    z: list[Tensor | None] = [None] * cfg.num_branches
    if cfg.connection_mode == "none":
        z = list(b)
    elif cfg.connection_mode == "interval":
        z[last] = b[last]
        if last >= 1:
            z[last - 1] = b[last - 1]
        for i in range(last - 2, -1, -1):
            up = bilinear_upsample(z[i + 2], sizes[i])
            z[i] = params.fuse[i].forward(b[i] + up, mode)
    else:  # cascade
        z[last] = b[last]
        for i in range(last - 1, -1, -1):
            up = bilinear_upsample(z[i + 1], sizes[i])
            z[i] = params.fuse[i].forward(b[i] + up, mode)

    full = []
    for i, zi in enumerate(z):
        full.append(zi if sizes[i] == (h, w) else bilinear_upsample(zi, (h, w)))
    out = conv2d(concat_channels(full), params.compress.conv)
    return out + conv2d(x, params.shortcut.conv)


def lmfm_cost(cfg: LmfmConfig, h: int, w: int) -> tuple[int, int]:
    """(param_count, flop_count) for the module on an HxW input.

    Conventions: conv FLOPs = 2*MACs plus one add per output element for
    the bias; BN, ReLU, pooling and upsampling cost 1 FLOP per output
    element. Elementwise residual adds are not counted.
    """
    ms = cfg.max_finite_scale
    if h % ms != 0 or w % ms != 0:
        raise ValueError(f"spatial extents {h}x{w} not divisible by largest finite scale {ms}")
    cin, cb, cout = cfg.in_channels, cfg.branch_channels, cfg.out_channels
    sizes = _branch_sizes(cfg, h, w)

    params = 0
    flops = 0
    for i, s in enumerate(cfg.scales):
        bh, bw = sizes[i]
        if s == GLOBAL:
            flops += cin * 1 * 1  # global mean, 1 FLOP per output element
        elif s != 1:
            flops += cin * bh * bw  # average pooling
        p, f = conv_cost(cin, cb, 1, bh, bw)
        params += p
        flops += f
        p, f = bn_relu_cost(cb, bh, bw)
        params += p
        flops += f
    for i in cfg.fused_indices():
        bh, bw = sizes[i]
        flops += cb * bh * bw  # upsample feeding the fusion
        p, f = conv_cost(cb, cb, 3, bh, bw)
        params += p
        flops += f
        p, f = bn_relu_cost(cb, bh, bw)
        params += p
        flops += f
    for i, s in enumerate(cfg.scales):
        if sizes[i] != (h, w):
            flops += cb * h * w  # upsample to full size before concat
    p, f = conv_cost(cb * cfg.num_branches, cout, 1, h, w)
    params += p
    flops += f
    p, f = conv_cost(cin, cout, 1, h, w)
    params += p
    flops += f
    return params, flops
