"""Confusion matrix, IoU, and the boundary F-score."""

import numpy as np
import pytest

from naive import boundary_pixels_naive
from segfuse.labels import boundary_mask
from segfuse.metrics import (
    ConfusionMatrix,
    accumulate,
    boundary_fscore,
    fscore_from_counts,
    miou,
)


def test_perfect_prediction_diagonal():
    cm = ConfusionMatrix(3)
    gt = np.random.default_rng(0).integers(0, 3, size=(8, 8))
    accumulate(cm, gt, gt)
    assert cm.counts.sum() == 64
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    per, mean = miou(cm)
    assert mean == 1.0 and all(v == 1.0 for v in per)


def test_all_ignore_leaves_matrix_unchanged():
    cm = ConfusionMatrix(3)
    gt = np.full((4, 4), 255)
    pred = np.zeros((4, 4), dtype=int)
    accumulate(cm, pred, gt)
    assert cm.total == 0


def test_small_hand_counted_case():
    cm = ConfusionMatrix(2)
    gt = np.array([[0, 0, 1], [1, 1, 0], [0, 1, 1]])
    pred = np.array([[0, 1, 1], [1, 0, 0], [0, 1, 1]])
    accumulate(cm, pred, gt)
    # plain tally of the nine (gt, pred) pairs
    assert np.array_equal(cm.counts, [[3, 1], [1, 4]])


def test_miou_hand_formula():
    cm = ConfusionMatrix(2)
    cm.counts = np.array([[2, 2], [0, 4]])
    per, mean = miou(cm)
    assert per[0] == pytest.approx(2 / 4)
    assert per[1] == pytest.approx(4 / 6)
    assert mean == pytest.approx(7 / 12)


def test_absent_class_excluded_from_mean():
    cm = ConfusionMatrix(3)
    cm.counts = np.array([[5, 0, 0], [0, 5, 0], [0, 0, 0]])
    per, mean = miou(cm)
    assert per[2] is None
    assert mean == 1.0


def test_miou_all_empty_raises():
    with pytest.raises(ValueError):
        miou(ConfusionMatrix(2))


def test_accumulate_additive_and_mergeable():
    rng = np.random.default_rng(4)
    gt1, p1 = rng.integers(0, 3, (2, 6, 6))
    gt2, p2 = rng.integers(0, 3, (2, 6, 6))
    a = ConfusionMatrix(3)
    accumulate(a, p1, gt1)
    accumulate(a, p2, gt2)
    b1, b2 = ConfusionMatrix(3), ConfusionMatrix(3)
    accumulate(b1, p1, gt1)
    accumulate(b2, p2, gt2)
    assert np.array_equal(a.counts, b1.merge(b2).counts)


def test_miou_invariant_under_class_permutation():
    rng = np.random.default_rng(8)
    cm = ConfusionMatrix(4)
    cm.counts = rng.integers(0, 20, size=(4, 4))
    _, base = miou(cm)
    perm = rng.permutation(4)
    permuted = ConfusionMatrix(4)
    permuted.counts = cm.counts[np.ix_(perm, perm)]
    _, after = miou(permuted)
    assert base == pytest.approx(after, abs=1e-12)


def test_shape_mismatch_rejected():
    cm = ConfusionMatrix(2)
    with pytest.raises(ValueError, match="shape mismatch"):
        accumulate(cm, np.zeros((2, 2), int), np.zeros((3, 3), int))


# -- boundary F-score ---------------------------------------------------------


def test_boundary_mask_matches_naive():
    rng = np.random.default_rng(5)
    for _ in range(20):
        lab = rng.integers(0, 3, size=(7, 9))
        lab[0, 0] = 255
        got = set(map(tuple, np.argwhere(boundary_mask(lab))))
        assert got == boundary_pixels_naive(lab)


def test_fscore_perfect_prediction():
    lab = np.zeros((8, 8), dtype=int)
    lab[2:5, 2:5] = 1
    p, r, f = boundary_fscore(lab, lab, tolerance=0)
    assert (p, r, f) == (1.0, 1.0, 1.0)


def test_fscore_shift_within_tolerance():
    gt = np.zeros((16, 16), dtype=int)
    gt[4:10, 4:10] = 1
    d = 2
    shifted = np.zeros_like(gt)
    shifted[4 + d : 10 + d, 4:10] = 1  # rectangle moved down by d
    p, r, f = boundary_fscore(shifted, gt, tolerance=d)
    assert f == 1.0
    p2, _, f2 = boundary_fscore(shifted, gt, tolerance=d - 1)
    assert p2 < 1.0 and f2 < 1.0


def test_fscore_shift_brute_force_distances():
    rng = np.random.default_rng(9)
    gt = np.zeros((12, 12), dtype=int)
    gt[3:8, 2:9] = 1
    pred = np.roll(gt, 3, axis=1)
    d = 2
    pb = np.argwhere(boundary_mask(pred))
    gb = np.argwhere(boundary_mask(gt))
    hit = sum(
        1 for (i, j) in pb
        if any(max(abs(i - a), abs(j - b)) <= d for (a, b) in gb)
    )
    p, _, _ = boundary_fscore(pred, gt, tolerance=d)
    assert p == pytest.approx(hit / len(pb))


def test_fscore_uniform_prediction_recall_zero():
    gt = np.zeros((8, 8), dtype=int)
    gt[2:6, 2:6] = 1
    pred = np.zeros_like(gt)
    p, r, f = boundary_fscore(pred, gt, tolerance=1)
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_fscore_empty_conventions():
    assert fscore_from_counts(0, 0, 0, 0) == (1.0, 1.0, 1.0)
    assert fscore_from_counts(5, 3, 0, 0) == (0.0, 0.0, 0.0)
    assert fscore_from_counts(0, 0, 5, 3) == (0.0, 0.0, 0.0)


def test_scores_bounded():
    rng = np.random.default_rng(10)
    for _ in range(10):
        gt = rng.integers(0, 3, size=(9, 9))
        pred = rng.integers(0, 3, size=(9, 9))
        p, r, f = boundary_fscore(pred, gt, tolerance=1)
        for v in (p, r, f):
            assert 0.0 <= v <= 1.0
