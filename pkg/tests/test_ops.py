"""Network primitives against naive oracles and hand-computed values."""

import numpy as np
import pytest

from naive import (
    avg_pool2d_naive,
    bilinear_naive,
    conv2d_naive,
    cross_entropy_naive,
    global_avg_pool_naive,
    softmax_naive,
)
from segfuse.layers import init_conv
from segfuse.ops import (
    BatchNormParams,
    ConvParams,
    avg_pool2d,
    batch_norm,
    bilinear_upsample,
    conv2d,
    cross_entropy_map,
    global_avg_pool,
    make_batch_norm,
    relu,
    sgd_step,
    softmax_channels,
)
from segfuse.tensor import Tensor

RNG = np.random.default_rng(20240817)


# -- conv2d -----------------------------------------------------------------


def test_conv_1x1_identity():
    p = ConvParams(Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    x = Tensor(RNG.standard_normal((1, 1, 5, 5)))
    assert np.array_equal(conv2d(x, p).data, x.data)


def test_conv_centered_delta_identity():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    p = ConvParams(Tensor(w), Tensor(np.zeros(1)), padding=1)
    x = Tensor(RNG.standard_normal((1, 1, 6, 6)))
    assert np.array_equal(conv2d(x, p).data, x.data)


def test_conv_matches_naive_exactly():
    x = RNG.standard_normal((1, 2, 5, 5))
    w = RNG.standard_normal((3, 2, 3, 3))
    b = RNG.standard_normal(3)
    got = conv2d(Tensor(x), ConvParams(Tensor(w), Tensor(b))).data
    assert np.array_equal(got, conv2d_naive(x, w, b, 1, 0))


def test_conv_channel_mismatch_rejected():
    p = ConvParams(Tensor(RNG.standard_normal((2, 3, 3, 3))))
    with pytest.raises(ValueError, match="channel mismatch"):
        conv2d(Tensor(np.zeros((1, 2, 5, 5))), p)


def test_conv_floor_semantics_drop_partial_windows():
    # stride 2 on 6x6 with k=3: output is 2x2, the trailing row/col that
    # cannot fill a window is dropped
    x = RNG.standard_normal((1, 1, 6, 6))
    w = RNG.standard_normal((1, 1, 3, 3))
    p = ConvParams(Tensor(w), stride=2)
    out = conv2d(Tensor(x), p)
    assert out.shape == (1, 1, 2, 2)
    assert np.array_equal(out.data, conv2d_naive(x, w, None, 2, 0))


def test_conv_kernel_larger_than_input_rejected():
    p = ConvParams(Tensor(RNG.standard_normal((1, 1, 5, 5))))
    with pytest.raises(ValueError, match="larger than"):
        conv2d(Tensor(np.zeros((1, 1, 3, 3))), p)


def test_conv_even_kernel_rejected():
    with pytest.raises(ValueError, match="odd"):
        ConvParams(Tensor(np.zeros((1, 1, 2, 2))))


# -- pooling ----------------------------------------------------------------


def test_avg_pool_constant():
    x = Tensor(np.full((1, 2, 6, 6), 3.25))
    out = avg_pool2d(x, 2, 2)
    assert np.array_equal(out.data, np.full((1, 2, 3, 3), 3.25))


def test_avg_pool_hand_case():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    assert np.array_equal(avg_pool2d(x, 2, 2).data, [[[[2.5]]]])


def test_avg_pool_matches_naive():
    x = RNG.standard_normal((1, 3, 8, 8))
    got = avg_pool2d(Tensor(x), 2, 2).data
    assert np.array_equal(got, avg_pool2d_naive(x, 2, 2))


def test_avg_pool_window_too_large():
    with pytest.raises(ValueError, match="larger than input"):
        avg_pool2d(Tensor(np.zeros((1, 1, 3, 3))), 4, 1)


def test_global_avg_pool_constant_and_single_pixel():
    assert np.array_equal(
        global_avg_pool(Tensor(np.full((2, 3, 4, 4), 1.5))).data, np.full((2, 3, 1, 1), 1.5)
    )
    x = RNG.standard_normal((1, 2, 1, 1))
    assert np.array_equal(global_avg_pool(Tensor(x)).data, x)


def test_global_avg_pool_matches_naive():
    x = RNG.standard_normal((2, 3, 5, 7))
    assert np.array_equal(global_avg_pool(Tensor(x)).data, global_avg_pool_naive(x))


# -- bilinear ---------------------------------------------------------------


def test_bilinear_constant_any_target():
    x = Tensor(np.full((1, 2, 3, 3), 7.0))
    out = bilinear_upsample(x, (7, 5))
    assert np.allclose(out.data, 7.0)


def test_bilinear_identity():
    x = RNG.standard_normal((2, 3, 5, 6))
    assert np.array_equal(bilinear_upsample(Tensor(x), (5, 6)).data, x)


def test_bilinear_2x2_to_4x4_hand_values():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    out = bilinear_upsample(x, (4, 4)).data[0, 0]
    # Source coordinates per axis: [0, 0.25, 0.75, 1] after clamping.
    expected = np.array(
        [
            [1.0, 1.25, 1.75, 2.0],
            [1.5, 1.75, 2.25, 2.5],
            [2.5, 2.75, 3.25, 3.5],
            [3.0, 3.25, 3.75, 4.0],
        ]
    )
    assert np.array_equal(out, expected)
    assert np.array_equal(out, bilinear_naive(x.data, 4, 4)[0, 0])


def test_bilinear_matches_naive_random():
    x = RNG.standard_normal((1, 2, 3, 4))
    got = bilinear_upsample(Tensor(x), (7, 9)).data
    assert np.allclose(got, bilinear_naive(x, 7, 9), rtol=0, atol=1e-15)


def test_bilinear_shrink_rejected():
    with pytest.raises(ValueError, match="smaller than source"):
        bilinear_upsample(Tensor(np.zeros((1, 1, 4, 4))), (3, 4))


# -- batch norm --------------------------------------------------------------


def test_batch_norm_constant_input_train():
    bn = make_batch_norm(2)
    x = Tensor(np.full((2, 2, 3, 3), 4.0))
    out = batch_norm(x, bn)
    assert np.all(np.abs(out.data) <= 1e-2)  # variance 0 guarded by epsilon


def test_batch_norm_beta_shift():
    bn = make_batch_norm(1)
    bn.beta.data = np.array([5.0])
    x = Tensor(np.full((1, 1, 2, 2), 3.0))
    out = batch_norm(x, bn)
    assert np.allclose(out.data, 5.0, atol=1e-2)


def test_batch_norm_matches_hand_computation():
    x = RNG.standard_normal((2, 3, 4, 4))
    bn = make_batch_norm(3)
    bn.gamma.data = RNG.standard_normal(3)
    bn.beta.data = RNG.standard_normal(3)
    out = batch_norm(Tensor(x), bn).data
    for c in range(3):
        v = x[:, c]
        expected = bn.gamma.data[c] * (v - v.mean()) / np.sqrt(v.var() + bn.epsilon) + bn.beta.data[c]
        assert np.allclose(out[:, c], expected, atol=1e-12)


def test_batch_norm_running_stats_and_eval():
    bn = make_batch_norm(1, momentum=0.5)
    x = np.full((1, 1, 2, 2), 2.0)
    batch_norm(Tensor(x), bn)
    assert np.allclose(bn.running_mean, [1.0])  # 0.5*0 + 0.5*2
    bn.mode = "eval"
    out = batch_norm(Tensor(x), bn)
    expected = (2.0 - 1.0) / np.sqrt(bn.running_var[0] + bn.epsilon)
    assert np.allclose(out.data, expected)


def test_batch_norm_eval_before_update_rejected():
    bn = make_batch_norm(1)
    bn.mode = "eval"
    with pytest.raises(RuntimeError, match="running-stat"):
        batch_norm(Tensor(np.zeros((1, 1, 2, 2))), bn)


def test_batch_norm_train_needs_two_values():
    bn = make_batch_norm(1)
    with pytest.raises(ValueError, match=">= 2"):
        batch_norm(Tensor(np.zeros((1, 1, 1, 1))), bn)


def test_batch_norm_eval_is_affine():
    # affine maps preserve affine combinations: f(a*x1 + (1-a)*x2)
    bn = make_batch_norm(2)
    batch_norm(Tensor(RNG.standard_normal((2, 2, 3, 3))), bn)  # seed stats
    bn.mode = "eval"
    x1 = RNG.standard_normal((1, 2, 3, 3))
    x2 = RNG.standard_normal((1, 2, 3, 3))
    a = 0.3
    lhs = batch_norm(Tensor(a * x1 + (1 - a) * x2), bn).data
    rhs = a * batch_norm(Tensor(x1), bn).data + (1 - a) * batch_norm(Tensor(x2), bn).data
    assert np.allclose(lhs, rhs, atol=1e-12)


# -- softmax / cross entropy --------------------------------------------------


def test_softmax_uniform_logits():
    x = Tensor(np.zeros((1, 4, 2, 2)))
    assert np.allclose(softmax_channels(x).data, 0.25)


def test_softmax_shift_invariance():
    x = RNG.standard_normal((1, 3, 4, 4))
    a = softmax_channels(Tensor(x)).data
    b = softmax_channels(Tensor(x + 13.7)).data
    assert np.allclose(a, b, atol=1e-12)


def test_softmax_matches_scalar_oracle():
    x = RNG.standard_normal((2, 3, 3, 3))
    got = softmax_channels(Tensor(x)).data
    assert np.allclose(got, softmax_naive(x), atol=1e-12)
    assert np.all(got > 0) and np.all(got < 1)
    assert np.allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_cross_entropy_one_hot_is_zero():
    labels = RNG.integers(0, 3, size=(1, 4, 4))
    probs = np.zeros((1, 3, 4, 4))
    for i in range(4):
        for j in range(4):
            probs[0, labels[0, i, j], i, j] = 1.0
    out = cross_entropy_map(Tensor(probs), labels)
    assert np.array_equal(out.data, np.zeros((1, 4, 4)))


def test_cross_entropy_half_probability():
    probs = np.full((1, 2, 2, 2), 0.5)
    labels = np.zeros((1, 2, 2), dtype=np.int64)
    out = cross_entropy_map(Tensor(probs), labels)
    assert np.allclose(out.data, np.log(2.0))


def test_cross_entropy_matches_scalar_oracle():
    logits = RNG.standard_normal((1, 3, 4, 4))
    probs = softmax_channels(Tensor(logits))
    labels = RNG.integers(0, 3, size=(1, 4, 4))
    labels[0, 0, 0] = 255  # ignored pixel maps to 0
    got = cross_entropy_map(probs, labels).data
    assert np.allclose(got, cross_entropy_naive(probs.data, labels), atol=1e-12)
    assert got[0, 0, 0] == 0.0


def test_cross_entropy_label_out_of_range():
    probs = softmax_channels(Tensor(RNG.standard_normal((1, 2, 2, 2))))
    labels = np.full((1, 2, 2), 7, dtype=np.int64)
    with pytest.raises(ValueError, match="out of range"):
        cross_entropy_map(probs, labels)


# -- relu / sgd ---------------------------------------------------------------


def test_relu_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(relu(x).data, [0.0, 0.0, 2.0])


def test_sgd_plain_step():
    p = Tensor(np.array([1.0, 2.0]))
    v = np.zeros(2)
    g = np.array([0.5, -0.5])
    sgd_step(p, g, v, lr=1.0, momentum=0.0, weight_decay=0.0)
    assert np.array_equal(p.data, [0.5, 2.5])


def test_sgd_momentum_two_steps_hand():
    p = Tensor(np.array([1.0]))
    v = np.zeros(1)
    sgd_step(p, np.array([1.0]), v, lr=0.1, momentum=0.9, weight_decay=0.0)
    # v=1, p=0.9
    sgd_step(p, np.array([1.0]), v, lr=0.1, momentum=0.9, weight_decay=0.0)
    # v=1.9, p=0.9-0.19=0.71
    assert np.allclose(p.data, [0.71])
    assert np.allclose(v, [1.9])


def test_sgd_weight_decay_shrinks():
    p = Tensor(np.array([2.0]))
    v = np.zeros(1)
    sgd_step(p, np.array([0.0]), v, lr=0.1, momentum=0.0, weight_decay=0.5)
    assert np.allclose(p.data, [1.9])


# -- big randomized oracle sweep (also exercised by acceptance) ---------------


def test_conv_oracle_sweep_small():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, ci, co = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 2))
        h = int(rng.integers(k, 7))
        h += (h + 2 * pad - k) % stride
        w = int(rng.integers(k, 7))
        w += (w + 2 * pad - k) % stride
        x = rng.standard_normal((n, ci, h, w))
        wt = rng.standard_normal((co, ci, k, k))
        b = rng.standard_normal(co)
        p = ConvParams(Tensor(wt), Tensor(b), stride=stride, padding=pad)
        assert np.array_equal(conv2d(Tensor(x), p).data, conv2d_naive(x, wt, b, stride, pad))
