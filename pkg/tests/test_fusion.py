"""Multi-scale fusion module: shape contract, degenerate configurations,
recurrence equivalence, cost accounting, and structural invariants."""

import numpy as np
import pytest

from segfuse.fusion import GLOBAL, LmfmConfig, init_lmfm, lmfm_cost, lmfm_forward
from segfuse.ops import (
    avg_pool2d,
    batch_norm,
    bilinear_upsample,
    concat_channels,
    conv2d,
    global_avg_pool,
    relu,
)
from segfuse.tensor import Tensor

RNG = np.random.default_rng(42)


def small_cfg(mode="interval", scales=(1, 2, GLOBAL)):
    return LmfmConfig(in_channels=4, branch_channels=2, out_channels=3,
                      scales=scales, connection_mode=mode)


def test_output_shape_contract():
    for h, w in ((4, 4), (8, 4), (8, 12)):
        cfg = LmfmConfig(4, 2, 5, scales=(1, 2, 4, GLOBAL))
        params = init_lmfm(cfg, np.random.default_rng(0))
        x = Tensor(RNG.standard_normal((2, 4, h, w)))
        out = lmfm_forward(x, cfg, params, "train")
        assert out.shape == (2, 5, h, w)


def test_zero_weights_zero_output():
    cfg = small_cfg()
    params = init_lmfm(cfg, np.random.default_rng(0))
    for name, t in dict(params.params("m")).items():
        t.data = np.zeros_like(t.data)
    x = Tensor(np.full((2, 4, 4, 4), 3.0))
    out = lmfm_forward(x, cfg, params, "train")
    assert np.array_equal(out.data, np.zeros_like(out.data))


def test_config_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        LmfmConfig(4, 2, 3, scales=(1, 4, 2, GLOBAL))
    with pytest.raises(ValueError, match="start with factor 1"):
        LmfmConfig(4, 2, 3, scales=(2, 4, GLOBAL))
    with pytest.raises(ValueError, match="last scale"):
        LmfmConfig(4, 2, 3, scales=(1, 2, 4))
    with pytest.raises(ValueError, match="not be empty"):
        LmfmConfig(4, 2, 3, scales=())
    with pytest.raises(ValueError, match="at least 3 branches"):
        LmfmConfig(4, 2, 3, scales=(1, GLOBAL), connection_mode="interval")
    # none/cascade mode accepts two branches
    LmfmConfig(4, 2, 3, scales=(1, GLOBAL), connection_mode="none")


def test_divisibility_enforced():
    cfg = LmfmConfig(4, 2, 3, scales=(1, 4, GLOBAL), connection_mode="cascade")
    params = init_lmfm(cfg, np.random.default_rng(0))
    with pytest.raises(ValueError, match="divisible"):
        lmfm_forward(Tensor(RNG.standard_normal((1, 4, 6, 6))), cfg, params, "train")


def _convbn(x, cb, mode):
    y = conv2d(x, cb.conv)
    if cb.bn is not None:
        cb.bn.mode = mode
        y = batch_norm(y, cb.bn)
    if cb.use_relu:
        y = relu(y)
    return y


def manual_eval(x, cfg, params, mode):
    """Independent composition of both recurrences from the primitives."""
    h, w = x.shape[2], x.shape[3]
    sizes = []
    for s in cfg.scales:
        sizes.append((1, 1) if s == GLOBAL else (h // s, w // s))
    b = []
    for i, s in enumerate(cfg.scales):
        if s == GLOBAL:
            pooled = global_avg_pool(x)
        elif s == 1:
            pooled = x
        else:
            pooled = avg_pool2d(x, s, s)
        b.append(_convbn(pooled, params.branches[i], mode))
    last = len(b) - 1
    z = list(b)
    if cfg.connection_mode == "interval":
        for i in range(last - 2, -1, -1):
            z[i] = _convbn(b[i] + bilinear_upsample(z[i + 2], sizes[i]), params.fuse[i], mode)
    elif cfg.connection_mode == "cascade":
        for i in range(last - 1, -1, -1):
            z[i] = _convbn(b[i] + bilinear_upsample(z[i + 1], sizes[i]), params.fuse[i], mode)
    full = [zi if sizes[i] == (h, w) else bilinear_upsample(zi, (h, w)) for i, zi in enumerate(z)]
    return conv2d(concat_channels(full), params.compress.conv) + conv2d(x, params.shortcut.conv)


def test_interval_vs_cascade_recurrences():
    # Same parameters; with scales (1,2,GLOBAL) the two modes differ only
    # in the source of z_0 (z_2 vs z_1). Verify both against direct
    # evaluation of their formulas, and that they actually differ.
    x_data = RNG.standard_normal((2, 4, 4, 4))
    outs = {}
    for mode in ("interval", "cascade"):
        cfg = small_cfg(mode)
        params = init_lmfm(cfg, np.random.default_rng(7))
        x = Tensor(x_data.copy())
        got = lmfm_forward(x, cfg, params, "train")
        # fresh params with identical seed for the manual route (BN state moves)
        params2 = init_lmfm(cfg, np.random.default_rng(7))
        expected = manual_eval(Tensor(x_data.copy()), cfg, params2, "train")
        assert np.array_equal(got.data, expected.data)
        outs[mode] = got.data
    assert not np.array_equal(outs["interval"], outs["cascade"])


def test_none_mode_scale1_branch_is_affine():
    # Identity-preserving parameters on the scale-1 branch; all other
    # contributions zeroed. The module output must then be affine in x,
    # so it preserves convex combinations of positive inputs.
    cfg = LmfmConfig(2, 2, 2, scales=(1, 2, GLOBAL), connection_mode="none")
    params = init_lmfm(cfg, np.random.default_rng(0))
    for name, t in dict(params.params("m")).items():
        t.data = np.zeros_like(t.data)
    eye = np.zeros((2, 2, 1, 1))
    eye[0, 0], eye[1, 1] = 1.0, 1.0
    params.branches[0].conv.weight.data = eye.copy()
    params.branches[0].bn.gamma.data = np.ones(2)
    for branch in params.branches:
        branch.bn.batches_tracked = 1  # unit stats: BN acts as identity
    comp = np.zeros((2, 6, 1, 1))
    comp[0, 0], comp[1, 1] = 1.0, 1.0  # pass branch 0 channels through
    params.compress.conv.weight.data = comp

    def run(arr):
        return lmfm_forward(Tensor(arr), cfg, params, "eval").data

    x1 = RNG.random((1, 2, 4, 4)) + 0.5
    x2 = RNG.random((1, 2, 4, 4)) + 0.5
    a = 0.4
    assert np.allclose(run(a * x1 + (1 - a) * x2), a * run(x1) + (1 - a) * run(x2), atol=1e-12)


def test_translation_covariance():
    # Shifting content by a multiple of the largest finite scale shifts the
    # output identically (checked away from the conv borders, eval mode).
    cfg = LmfmConfig(2, 2, 3, scales=(1, 2, 4, GLOBAL))
    params = init_lmfm(cfg, np.random.default_rng(3))
    shift = 4
    base = np.zeros((1, 2, 16, 16))
    block = RNG.standard_normal((2, 4, 4))
    x1 = base.copy()
    x1[0, :, 4:8, 4:8] = block
    x2 = base.copy()
    x2[0, :, 4 + shift : 8 + shift, 4 + shift : 8 + shift] = block
    # populate BN stats once, then compare in eval mode
    lmfm_forward(Tensor(RNG.standard_normal((2, 2, 16, 16))), cfg, params, "train")
    o1 = lmfm_forward(Tensor(x1), cfg, params, "eval").data
    o2 = lmfm_forward(Tensor(x2), cfg, params, "eval").data
    assert np.allclose(o1[:, :, 2:10, 2:10], o2[:, :, 2 + shift : 10 + shift, 2 + shift : 10 + shift],
                       atol=1e-9)


def test_cost_single_conv_hand_count():
    # One 1x1 conv Ci=Co=1 on 4x4: params w+b = 2, FLOPs 2*16 MACs + 16 bias adds.
    from segfuse.layers import conv_cost

    params, flops = conv_cost(1, 1, 1, 4, 4)
    assert params == 2
    assert flops == 2 * 16 + 16


def test_cost_rejects_bad_config():
    with pytest.raises(ValueError):
        LmfmConfig(4, 2, 3, scales=())


def test_cost_flops_quadruple_when_doubling():
    cfg = LmfmConfig(4, 2, 3, scales=(1, 2, GLOBAL), connection_mode="cascade")
    p1, f1 = lmfm_cost(cfg, 8, 8)
    p2, f2 = lmfm_cost(cfg, 16, 16)
    p3, f3 = lmfm_cost(cfg, 32, 32)
    assert p1 == p2 == p3
    # Every spatially-resolved layer is linear in pixels; only the
    # constant-size global-pool tail is not, and it cancels in the second
    # difference, which therefore quadruples exactly.
    assert (f3 - f2) == 4 * (f2 - f1)
    assert f2 > 3.9 * f1
    assert f2 <= 4 * f1


def test_cost_params_match_built_params():
    for mode in ("interval", "cascade", "none"):
        cfg = LmfmConfig(4, 2, 3, scales=(1, 2, GLOBAL), connection_mode=mode)
        params = init_lmfm(cfg, np.random.default_rng(0))
        built = sum(t.size for _, t in params.params("m"))
        counted, _ = lmfm_cost(cfg, 8, 8)
        assert built == counted
