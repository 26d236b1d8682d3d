"""Differentiable network primitives: convolution, pooling, resampling,
batch normalization, softmax, the per-pixel cross-entropy map, and the
SGD update rule.

Reduction order matters here: conv2d, avg_pool2d and global_avg_pool
accumulate each output element sequentially over (ci, kh, kw) / window
offsets in row-major order, so they are bitwise equal to a naive
direct-loop reference. Bilinear resampling uses the half-pixel-center
convention u = (i + 0.5) * H / H' - 0.5 clamped to [0, H - 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .tensor import Tensor, apply_op

CE_PROB_FLOOR = 1e-12


@dataclass
class ConvParams:
    """Weights for one convolution: weight [Co,Ci,kh,kw], optional bias [Co]."""

    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ValueError(f"conv weight must be 4-d, got shape {self.weight.shape}")
        co, ci, kh, kw = self.weight.shape
        if co < 1 or ci < 1:
            raise ValueError("conv needs Co, Ci >= 1")
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
        if self.bias is not None and self.bias.shape != (co,):
            raise ValueError(f"bias shape {self.bias.shape} does not match Co={co}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")


@dataclass
class BatchNormParams:
    """Per-channel affine normalization with tracked running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"
    batches_tracked: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be >= 0")


def make_batch_norm(channels: int, epsilon: float = 1e-5, momentum: float = 0.1) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(np.ones(channels), requires_grad=True),
        beta=Tensor(np.zeros(channels), requires_grad=True),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        epsilon=epsilon,
        momentum=momentum,
    )


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Cross-correlation (no kernel flip) with optional bias.

    Output extents follow the usual floor rule H' = (H + 2*pad - kh)//stride
    + 1; trailing rows or columns that do not fill a window are dropped
    (a strict divisibility rule would forbid every stride-2 odd-kernel
    conv on even extents, which the backbone stem needs).
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be [N,C,H,W], got shape {x.shape}")
    n, ci, h, w = x.shape
    co, ci_w, kh, kw = p.weight.shape
    if ci != ci_w:
        raise ValueError(f"channel mismatch: input has {ci}, weight expects {ci_w}")
    stride, pad = p.stride, p.padding
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out = np.zeros((n, co, ho, wo))
    _kernels.conv2d_fwd(xp, p.weight.data, stride, out)
    if p.bias is not None:
        out += p.bias.data[None, :, None, None]

    wdata = p.weight.data
    has_bias = p.bias is not None

    def bwd(g):
        g = np.ascontiguousarray(g)
        dw = np.zeros_like(wdata)
        _kernels.conv2d_bwd_dw(xp, g, stride, dw)
        dxp = np.zeros_like(xp)
        _kernels.conv2d_bwd_dx(wdata, g, stride, dxp)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        if has_bias:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    inputs = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)
    return apply_op(inputs, out, bwd, "conv2d")


def avg_pool2d(x: Tensor, k: int, s: int) -> Tensor:
    """Mean over k*k windows advanced by stride s."""
    if x.ndim != 4:
        raise ValueError(f"avg_pool2d input must be [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    if k < 1 or s < 1:
        raise ValueError("window and stride must be >= 1")
    if h < k or w < k:
        raise ValueError(f"pool window {k} larger than input {h}x{w}")
    if (h - k) % s != 0 or (w - k) % s != 0:
        raise ValueError("non-integral pooling output extent")
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1

    acc = np.zeros((n, c, ho, wo))
    for di in range(k):
        for dj in range(k):
            acc += x.data[:, :, di : di + s * ho : s, dj : dj + s * wo : s]
    out = acc / (k * k)

    def bwd(g):
        dx = np.zeros((n, c, h, w))
        gk = g / (k * k)
        for di in range(k):
            for dj in range(k):
                dx[:, :, di : di + s * ho : s, dj : dj + s * wo : s] += gk
        return (dx,)

    return apply_op((x,), out, bwd, "avg_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions per channel, kept as [N,C,1,1]."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool input must be [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    acc = np.zeros((n, c))
    for i in range(h):
        for j in range(w):
            acc += x.data[:, :, i, j]
    out = (acc / (h * w)).reshape(n, c, 1, 1)

    def bwd(g):
        return (np.broadcast_to(g / (h * w), (n, c, h, w)).copy(),)

    return apply_op((x,), out, bwd, "global_avg_pool")


def bilinear_upsample(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Bilinear resize to ``size`` (target extents must not shrink)."""
    if x.ndim != 4:
        raise ValueError(f"bilinear_upsample input must be [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    ho, wo = size
    if ho < h or wo < w:
        raise ValueError(f"target {ho}x{wo} smaller than source {h}x{w}")
    out = np.empty((n, c, ho, wo))
    _kernels.bilinear_fwd(x.data, out)

    def bwd(g):
        dx = np.zeros((n, c, h, w))
        _kernels.bilinear_bwd(np.ascontiguousarray(g), dx)
        return (dx,)

    return apply_op((x,), out, bwd, "bilinear_upsample")


def batch_norm(x: Tensor, p: BatchNormParams) -> Tensor:
    """Normalize per channel; batch statistics in train mode, running
    statistics in eval mode. Train mode updates the running stats with
    r <- (1 - momentum) * r + momentum * batch (biased variance)."""
    if x.ndim != 4:
        raise ValueError(f"batch_norm input must be [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    if c != p.gamma.size:
        raise ValueError(f"channel mismatch: input has {c}, params expect {p.gamma.size}")

    if p.mode == "train":
        count = n * h * w
        if count < 2:
            raise ValueError("train-mode batch_norm needs N*H*W >= 2")
        mu, var = _kernels.bn_batch_stats(x.data)
        p.running_mean = (1.0 - p.momentum) * p.running_mean + p.momentum * mu
        p.running_var = (1.0 - p.momentum) * p.running_var + p.momentum * var
        p.batches_tracked += 1
    elif p.mode == "eval":
        if p.batches_tracked == 0:
            raise RuntimeError("eval-mode batch_norm before any running-stat update")
        mu = p.running_mean
        var = p.running_var
    else:
        raise ValueError(f"unknown batch_norm mode {p.mode!r}")

    inv = 1.0 / np.sqrt(var + p.epsilon)
    out = np.empty_like(x.data)
    _kernels.bn_normalize(x.data, mu, inv, p.gamma.data, p.beta.data, out)

    xdata = x.data
    gamma = p.gamma.data
    train = p.mode == "train"

    def bwd(g):
        xhat = (xdata - mu[None, :, None, None]) * inv[None, :, None, None]
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma[None, :, None, None]
        if train:
            m = n * h * w
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            dx = (inv[None, :, None, None] / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv[None, :, None, None]
        return dx, dgamma, dbeta

    return apply_op((x, p.gamma, p.beta), out, bwd, "batch_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return apply_op((x,), np.maximum(x.data, 0.0), bwd, "relu")


def softmax_channels(x: Tensor) -> Tensor:
    """Channel-wise softmax per pixel, computed with max subtraction."""
    if x.ndim != 4:
        raise ValueError(f"softmax_channels input must be [N,M,H,W], got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - dot),)

    return apply_op((x,), probs, bwd, "softmax_channels")


def cross_entropy_map(probs: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Per-pixel -log(probs[label]) with probabilities floored at 1e-12.

    Ignored pixels map to 0 and must be excluded from any later mean by
    the caller. Raises on labels outside [0, M) that are not the ignore
    index.
    """
    if probs.ndim != 4:
        raise ValueError(f"cross_entropy_map probs must be [N,M,H,W], got shape {probs.shape}")
    n, m, h, w = probs.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} does not match probs {probs.shape}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= m))
    if np.any(bad):
        raise ValueError(f"label out of range [0, {m}) at {np.argwhere(bad)[0]}")

    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(probs.data, safe[:, None, :, :], axis=1)[:, 0]
    floored = np.maximum(picked, CE_PROB_FLOOR)
    out = np.where(valid, -np.log(floored), 0.0)

    nn, hh, ww = np.nonzero(valid)
    ll = safe[nn, hh, ww]
    live = picked > CE_PROB_FLOOR

    def bwd(g):
        dp = np.zeros((n, m, h, w))
        gv = np.where(live, -g / floored, 0.0)
        dp[nn, ll, hh, ww] = gv[nn, hh, ww]
        return (dp,)

    return apply_op((probs,), out, bwd, "cross_entropy_map")


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate [N,C_i,H,W] tensors along the channel axis."""
    if not parts:
        raise ValueError("concat_channels needs at least one input")
    out = np.concatenate([t.data for t in parts], axis=1)
    widths = [t.shape[1] for t in parts]

    def bwd(g):
        grads = []
        off = 0
        for cw in widths:
            grads.append(g[:, off : off + cw])
            off += cw
        return tuple(grads)

    return apply_op(tuple(parts), out, bwd, "concat_channels")


def sgd_step(
    param: Tensor,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""
    velocity *= momentum
    velocity += grad + weight_decay * param.data
    param.data -= lr * velocity


class SgdOptimizer:
    """Momentum SGD over a name -> Tensor parameter mapping."""

    def __init__(self, params: dict[str, Tensor], momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        for name, t in self.params.items():
            grad = t.grad if t.grad is not None else np.zeros_like(t.data)
            sgd_step(t, grad, self.velocity[name], lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
