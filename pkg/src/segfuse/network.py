"""Miniature dual-resolution segmentation network.

Stage layout: a two-conv stride-2 stem brings the input to 1/4
resolution, after which a high branch keeps 1/4 resolution while a low
branch descends to 1/8 and 1/16. Two bilateral fusion points exchange
information (high-to-low through stride-2 3x3 convs, low-to-high through
a 1x1 conv plus bilinear upsampling). The multi-scale fusion module runs
on the final 1/16 map; its output is upsampled and summed into the high
branch, and a conv head compresses to one channel per class before the
final bilinear upsample back to input resolution. The head returns raw
logits; softmax lives in the loss.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .fusion import GLOBAL, LmfmConfig, LmfmParams, init_lmfm, lmfm_cost, lmfm_forward
from .layers import ConvBn, ResBlock, bn_relu_cost, conv_cost
from .ops import bilinear_upsample, conv2d, relu
from .tensor import Tensor

CHECKPOINT_MAGIC = b"BCMF"
CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    num_classes: int = 4
    stem_channels: int = 8
    high_channels: int = 16
    low_channels: int = 32
    blocks_per_stage: int = 1
    head_channels: int = 32
    divisibility: int = 16
    lmfm: LmfmConfig = field(default_factory=lambda: LmfmConfig(32, 8, 16))

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        for name in ("stem_channels", "high_channels", "low_channels",
                     "blocks_per_stage", "head_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.divisibility < 16:
            raise ValueError("divisibility must be >= 16 (the network downsamples 16x)")
        if self.lmfm.in_channels != self.low_channels:
            raise ValueError("lmfm.in_channels must equal low_channels")
        if self.lmfm.out_channels != self.high_channels:
            raise ValueError("lmfm.out_channels must equal high_channels")

    def required_multiple(self) -> int:
        return self.divisibility * self.lmfm.max_finite_scale

    def check_input(self, h: int, w: int) -> None:
        m = self.required_multiple()
        if h % m != 0 or w % m != 0:
            raise ValueError(f"input {h}x{w} must be divisible by {m}")

    def digest(self) -> str:
        parts = [
            f"num_classes={self.num_classes}",
            f"stem_channels={self.stem_channels}",
            f"high_channels={self.high_channels}",
            f"low_channels={self.low_channels}",
            f"blocks_per_stage={self.blocks_per_stage}",
            f"head_channels={self.head_channels}",
            f"divisibility={self.divisibility}",
            f"lmfm.in_channels={self.lmfm.in_channels}",
            f"lmfm.branch_channels={self.lmfm.branch_channels}",
            f"lmfm.out_channels={self.lmfm.out_channels}",
            f"lmfm.scales={','.join(str(s) for s in self.lmfm.scales)}",
            f"lmfm.connection_mode={self.lmfm.connection_mode}",
        ]
        return hashlib.sha256(";".join(parts).encode()).hexdigest()


class NetParams:
    """All parameters and normalization state for one network instance."""

    def __init__(self, cfg: NetConfig, seed: int):
        rng = np.random.default_rng(seed)
        ch, cl = cfg.high_channels, cfg.low_channels
        nb = cfg.blocks_per_stage
        self.cfg = cfg
        self.seed = seed
        self.stem1 = ConvBn(rng, 3, cfg.stem_channels, 3, stride=2)
        self.stem2 = ConvBn(rng, cfg.stem_channels, ch, 3, stride=2)
        self.high1 = [ResBlock(rng, ch) for _ in range(nb)]
        self.low1_down = ConvBn(rng, ch, cl, 3, stride=2)
        self.low1 = [ResBlock(rng, cl) for _ in range(nb)]
        self.f1_down = ConvBn(rng, ch, cl, 3, stride=2, use_relu=False)
        self.f1_up = ConvBn(rng, cl, ch, 1, use_relu=False)
        self.high2 = [ResBlock(rng, ch) for _ in range(nb)]
        self.low2_down = ConvBn(rng, cl, cl, 3, stride=2)
        self.low2 = [ResBlock(rng, cl) for _ in range(nb)]
        self.f2_down_a = ConvBn(rng, ch, cl, 3, stride=2)
        self.f2_down_b = ConvBn(rng, cl, cl, 3, stride=2, use_relu=False)
        self.f2_up = ConvBn(rng, cl, ch, 1, use_relu=False)
        self.lmfm = init_lmfm(cfg.lmfm, rng)
        self.head = ConvBn(rng, ch, cfg.head_channels, 3)
        self.classifier = ConvBn(rng, cfg.head_channels, cfg.num_classes, 1,
                                 use_bn=False, use_relu=False)

    def _modules(self):
        yield "stem1", self.stem1
        yield "stem2", self.stem2
        for i, b in enumerate(self.high1):
            yield f"high1.{i}", b
        yield "low1_down", self.low1_down
        for i, b in enumerate(self.low1):
            yield f"low1.{i}", b
        yield "f1_down", self.f1_down
        yield "f1_up", self.f1_up
        for i, b in enumerate(self.high2):
            yield f"high2.{i}", b
        yield "low2_down", self.low2_down
        for i, b in enumerate(self.low2):
            yield f"low2.{i}", b
        yield "f2_down_a", self.f2_down_a
        yield "f2_down_b", self.f2_down_b
        yield "f2_up", self.f2_up
        yield "lmfm", self.lmfm
        yield "head", self.head
        yield "classifier", self.classifier

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, mod in self._modules():
            for key, t in mod.params(name):
                out[key] = t
        return out

    def named_state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, mod in self._modules():
            for key, arr in mod.state(name):
                out[key] = arr
        return out

    def load_entries(self, entries: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        state = self.named_state()
        expected = set(params) | set(state)
        got = set(entries)
        if expected != got:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise ValueError(f"checkpoint entries mismatch (missing {missing}, extra {extra})")
        for key, t in params.items():
            if entries[key].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {key}")
            t.data = entries[key].copy()
        for name, mod in self._modules():
            mod.load_state(name, entries)

    def param_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())


def build(cfg: NetConfig, seed: int) -> NetParams:
    """Deterministic initialization: identical seeds give bitwise
    identical parameters."""
    return NetParams(cfg, seed)


def forward(x: Tensor, net: NetParams, mode: str = "train") -> Tensor:
    """Run the network on an [N,3,H,W] batch and return [N,M,H,W] logits."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"input must be [N,3,H,W], got shape {x.shape}")
    cfg = net.cfg
    n, _, h, w = x.shape
    cfg.check_input(h, w)

    y = net.stem2.forward(net.stem1.forward(x, mode), mode)  # 1/4
    hi = y
    for blk in net.high1:
        hi = blk.forward(hi, mode)
    lo = net.low1_down.forward(y, mode)  # 1/8
    for blk in net.low1:
        lo = blk.forward(lo, mode)

    # bilateral fusion 1 (high at 1/4, low at 1/8)
    lo_f = relu(lo + net.f1_down.forward(hi, mode))
    hi_f = relu(hi + bilinear_upsample(net.f1_up.forward(lo, mode), (h // 4, w // 4)))

    hi2 = hi_f
    for blk in net.high2:
        hi2 = blk.forward(hi2, mode)
    lo2 = net.low2_down.forward(lo_f, mode)  # 1/16
    for blk in net.low2:
        lo2 = blk.forward(lo2, mode)

    # bilateral fusion 2 (high at 1/4, low at 1/16; downward bridge is two
    # stride-2 convs)
    bridge = net.f2_down_b.forward(net.f2_down_a.forward(hi_f, mode), mode)
    lo2_f = relu(lo2 + bridge)
    hi2_f = relu(hi2 + bilinear_upsample(net.f2_up.forward(lo2, mode), (h // 4, w // 4)))

    fused = lmfm_forward(lo2_f, cfg.lmfm, net.lmfm, mode)
    merged = hi2_f + bilinear_upsample(fused, (h // 4, w // 4))

    head = net.head.forward(merged, mode)
    logits = conv2d(head, net.classifier.conv)
    return bilinear_upsample(logits, (h, w))


def count_cost(cfg: NetConfig, h: int, w: int) -> tuple[int, int]:
    """(params, flops) mirroring the layer graph of :func:`forward`.

    Same conventions as :func:`segfuse.fusion.lmfm_cost`: conv FLOPs are
    2*MACs plus bias adds, BN/ReLU/pool/upsample cost 1 FLOP per output
    element, and elementwise residual adds are free.
    """
    cfg.check_input(h, w)
    ch, cl = cfg.high_channels, cfg.low_channels
    h4, w4 = h // 4, w // 4
    h8, w8 = h // 8, w // 8
    h16, w16 = h // 16, w // 16
    params = 0
    flops = 0

    def convbn(cin, cout, k, ho, wo, use_bn=True, use_relu=True):
        nonlocal params, flops
        p, f = conv_cost(cin, cout, k, ho, wo)
        params += p
        flops += f
        if use_bn or use_relu:
            p, f = bn_relu_cost(cout, ho, wo, use_relu=use_relu)
            params += p if use_bn else 0
            flops += f if use_bn else (cout * ho * wo if use_relu else 0)

    def resblock(c, ho, wo):
        convbn(c, c, 3, ho, wo)
        convbn(c, c, 3, ho, wo)

    convbn(3, cfg.stem_channels, 3, h // 2, w // 2)
    convbn(cfg.stem_channels, ch, 3, h4, w4)
    for _ in range(cfg.blocks_per_stage):
        resblock(ch, h4, w4)
    convbn(ch, cl, 3, h8, w8)
    for _ in range(cfg.blocks_per_stage):
        resblock(cl, h8, w8)
    convbn(ch, cl, 3, h8, w8, use_relu=False)  # f1 down
    flops += cl * h8 * w8  # relu after the fusion add
    convbn(cl, ch, 1, h8, w8, use_relu=False)  # f1 up
    flops += ch * h4 * w4  # upsample of the f1 up path
    flops += ch * h4 * w4  # relu after the fusion add
    for _ in range(cfg.blocks_per_stage):
        resblock(ch, h4, w4)
    convbn(cl, cl, 3, h16, w16)
    for _ in range(cfg.blocks_per_stage):
        resblock(cl, h16, w16)
    convbn(ch, cl, 3, h8, w8)  # f2 down a
    convbn(cl, cl, 3, h16, w16, use_relu=False)  # f2 down b
    flops += cl * h16 * w16  # relu after the fusion add
    convbn(cl, ch, 1, h16, w16, use_relu=False)  # f2 up
    flops += ch * h4 * w4  # upsample of the f2 up path
    flops += ch * h4 * w4  # relu after the fusion add
    p, f = lmfm_cost(cfg.lmfm, h16, w16)
    params += p
    flops += f
    flops += cfg.lmfm.out_channels * h4 * w4  # upsample of the fused map
    convbn(ch, cfg.head_channels, 3, h4, w4)
    convbn(cfg.head_channels, cfg.num_classes, 1, h4, w4, use_bn=False, use_relu=False)
    flops += cfg.num_classes * h * w  # final upsample
    return params, flops


def save_checkpoint(path, net: NetParams) -> None:
    """Flat binary container; see :func:`load_checkpoint` for the layout."""
    entries: dict[str, np.ndarray] = {}
    for key, t in net.named_parameters().items():
        entries[key] = t.data
    entries.update(net.named_state())
    digest = net.cfg.digest().encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a checkpoint: magic "BCMF", u32 version, config digest, then
    per entry a name, rank/extents, and raw little-endian float64 data.
    Round-trips are bit exact."""
    with open(path, "rb") as fh:
        blob = fh.read()

    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated checkpoint")
        piece = blob[off : off + n]
        off += n
        return piece

    if take(4) != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (dlen,) = struct.unpack("<I", take(4))
    digest = take(dlen).decode()
    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape)
        entries[name] = data.astype(np.float64)
    if off != len(blob):
        raise ValueError("trailing bytes after checkpoint payload")
    return digest, entries


def restore(net: NetParams, path) -> None:
    """Load a checkpoint into an already-built network; the stored config
    digest must match the network's."""
    digest, entries = load_checkpoint(path)
    if digest != net.cfg.digest():
        raise ValueError("checkpoint/config digest mismatch")
    net.load_entries(entries)
