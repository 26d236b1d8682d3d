"""Finite-difference verification of every differentiable op and of the
composite losses. Each check builds a scalar function of one tensor,
compares the tape gradient against central differences, and reports the
worst relative error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BclConfig, boundary_loss, total_loss
from .fusion import GLOBAL, LmfmConfig, init_lmfm, lmfm_forward
from .layers import init_conv
from .ops import (
    avg_pool2d,
    batch_norm,
    bilinear_upsample,
    conv2d,
    cross_entropy_map,
    global_avg_pool,
    make_batch_norm,
    relu,
    softmax_channels,
)
from .tensor import Tape, Tensor, backward, finite_diff_grad, max_rel_err

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_err: float

    @property
    def passed(self) -> bool:
        return self.max_err <= TOLERANCE

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"op={self.name} instances={self.instances} max_rel_err={self.max_err:.3e} {status}"


def check_function(f, x: Tensor) -> float:
    """Worst relative error between the tape gradient of f at x and the
    finite-difference oracle."""
    with Tape():
        loss = f(x)
        backward(loss)
    analytic = x.grad
    reference = finite_diff_grad(f, x)
    return max_rel_err(analytic, reference)


def _softmax_weighted(y, w):
    # Weighted sums turn map-valued ops into scalars without flattening
    # the gradient structure the way a plain sum would.
    return (y * Tensor(w)).sum()


def run_suite(instances: int = 5, seed: int = 1234) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []

    def record(name, errs):
        results.append(CheckResult(name, len(errs), max(errs)))

    # conv2d, gradient through input, weight and bias
    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        p = init_conv(rng, 3, 4, 3, stride=1)
        w = rng.standard_normal((2, 4, 8, 8))
        errs.append(check_function(lambda t: _softmax_weighted(conv2d(t, p), w), x))
        wt = p.weight
        errs.append(check_function(lambda t: _softmax_weighted(conv2d(x, p), w), wt))
        bt = p.bias
        errs.append(check_function(lambda t: _softmax_weighted(conv2d(x, p), w), bt))
    record("conv2d", errs)

    # strided conv
    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 2, 8, 8)), requires_grad=True)
        p = init_conv(rng, 2, 3, 3, stride=2)
        w = rng.standard_normal((2, 3, 4, 4))
        errs.append(check_function(lambda t: _softmax_weighted(conv2d(t, p), w), x))
    record("conv2d_stride2", errs)

    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)), requires_grad=True)
        w = rng.standard_normal((2, 3, 4, 4))
        errs.append(check_function(lambda t: _softmax_weighted(avg_pool2d(t, 2, 2), w), x))
    record("avg_pool2d", errs)

    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
        w = rng.standard_normal((2, 4, 1, 1))
        errs.append(check_function(lambda t: _softmax_weighted(global_avg_pool(t), w), x))
    record("global_avg_pool", errs)

    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 2, 4, 5)), requires_grad=True)
        w = rng.standard_normal((2, 2, 9, 11))
        errs.append(check_function(
            lambda t: _softmax_weighted(bilinear_upsample(t, (9, 11)), w), x))
    record("bilinear_upsample", errs)

    for mode in ("train", "eval"):
        errs = []
        for _ in range(instances):
            x = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
            bn = make_batch_norm(3)
            bn.gamma.data = rng.standard_normal(3)
            bn.beta.data = rng.standard_normal(3)
            if mode == "eval":
                bn.running_mean = rng.standard_normal(3)
                bn.running_var = np.abs(rng.standard_normal(3)) + 0.5
                bn.batches_tracked = 1
            bn.mode = mode
            w = rng.standard_normal((2, 3, 5, 5))
            errs.append(check_function(lambda t: _softmax_weighted(batch_norm(t, bn), w), x))
            g = bn.gamma
            errs.append(check_function(lambda t: _softmax_weighted(batch_norm(x, bn), w), g))
        record(f"batch_norm_{mode}", errs)

    errs = []
    for _ in range(instances):
        # keep values away from the kink at zero
        vals = rng.standard_normal((2, 3, 6, 6))
        vals = np.where(np.abs(vals) < 0.05, vals + 0.2, vals)
        x = Tensor(vals, requires_grad=True)
        w = rng.standard_normal(x.shape)
        errs.append(check_function(lambda t: _softmax_weighted(relu(t), w), x))
    record("relu", errs)

    errs = []
    for _ in range(instances):
        x = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
        w = rng.standard_normal(x.shape)
        errs.append(check_function(lambda t: _softmax_weighted(softmax_channels(t), w), x))
    record("softmax_channels", errs)

    errs = []
    for _ in range(instances):
        logits = Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        labels = rng.integers(0, 3, size=(2, 4, 4))
        w = np.abs(rng.standard_normal((2, 4, 4)))
        errs.append(check_function(
            lambda t: _softmax_weighted(cross_entropy_map(softmax_channels(t), labels), w),
            logits))
    record("cross_entropy_map", errs)

    for mode in ("interval", "cascade"):
        errs = []
        for _ in range(instances):
            cfg = LmfmConfig(4, 2, 3, scales=(1, 2, GLOBAL), connection_mode=mode)
            params = init_lmfm(cfg, rng)
            x = Tensor(rng.standard_normal((2, 4, 4, 4)), requires_grad=True)
            w = rng.standard_normal((2, 3, 4, 4))
            errs.append(check_function(
                lambda t: _softmax_weighted(lmfm_forward(t, cfg, params, "train"), w), x))
        record(f"lmfm_{mode}", errs)

    bcl = BclConfig(step=1, nms_window=3, keep_fraction=0.5, min_kept=4)
    errs = []
    for _ in range(instances):
        logits = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
        labels = rng.integers(0, 3, size=(1, 8, 8))
        errs.append(check_function(
            lambda t: boundary_loss(softmax_channels(t), labels, bcl), logits))
    record("boundary_loss", errs)

    errs = []
    for _ in range(instances):
        logits = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
        labels = rng.integers(0, 3, size=(1, 8, 8))
        errs.append(check_function(lambda t: total_loss(t, labels, bcl), logits))
    record("total_loss", errs)

    return results


def main_report(instances: int = 5, seed: int = 1234) -> tuple[str, bool]:
    results = run_suite(instances=instances, seed=seed)
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    lines.append(f"gradcheck {'pass' if ok else 'FAIL'}: {sum(r.passed for r in results)}/{len(results)} ops")
    return "\n".join(lines) + "\n", ok
