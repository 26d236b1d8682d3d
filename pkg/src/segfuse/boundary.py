"""Boundary-corrected training loss.

Ground truth is compared against block-flipped copies of itself: columns
(rows) are partitioned into blocks of width 2s and the two halves of each
full block are swapped. A pixel whose 2s-block spans a class boundary
changes label under the flip, so its cross-entropy against a good
prediction spikes exactly near boundaries. Those spikes are filtered with
a sliding non-maximum suppression, ranked, and the top fraction enters a
weighted auxiliary term next to the ordinary cross-entropy.

Selection is non-differentiable by construction: NMS and ranking operate
on detached loss values, and gradients flow only through the selected
cross-entropy entries. Pixels with zero loss are never hard-sample
candidates, and ignored pixels are excluded throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .labels import DEFAULT_IGNORE
from .ops import cross_entropy_map, softmax_channels
from .tensor import Tensor

__all__ = [
    "BclConfig",
    "row_flip",
    "col_flip",
    "flip_ce_maps",
    "nms_filter",
    "select_hard",
    "boundary_loss",
    "total_loss",
    "loss_components",
]


@dataclass
class BclConfig:
    """Hyper-parameters: flip step s, term weights lambda1/lambda2, overall
    weight alpha, NMS window (odd), kept fraction theta in (0,1], and a
    floor on the number of selected pixels."""

    step: int = 1
    lambda1: float = 0.5
    lambda2: float = 0.5
    alpha: float = 0.4
    nms_window: int = 3
    keep_fraction: float = 0.25
    min_kept: int = 64

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0:
            raise ValueError("lambda1, lambda2 and alpha must be >= 0")
        if self.nms_window < 1 or self.nms_window % 2 == 0:
            raise ValueError("nms_window must be odd and >= 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.min_kept < 0:
            raise ValueError("min_kept must be >= 0")


def _block_perm(n: int, s: int) -> np.ndarray:
    """Index permutation swapping the halves of each full 2s block."""
    perm = np.arange(n)
    if s == 0:
        return perm
    block = 2 * s
    for start in range(0, n - block + 1, block):
        perm[start : start + s], perm[start + s : start + block] = (
            np.arange(start + s, start + block),
            np.arange(start, start + s),
        )
    return perm


def row_flip(gt: np.ndarray, s: int) -> np.ndarray:
    """Swap the first s with the last s columns inside each full 2s-wide
    column block; a trailing partial block is unchanged. s=0 is identity.
    Works on [..., H, W] arrays; ignore pixels move with their positions."""
    if s < 0:
        raise ValueError("step must be >= 0")
    gt = np.asarray(gt)
    return gt[..., _block_perm(gt.shape[-1], s)]


def col_flip(gt: np.ndarray, s: int) -> np.ndarray:
    """Row-block analogue of :func:`row_flip`."""
    if s < 0:
        raise ValueError("step must be >= 0")
    gt = np.asarray(gt)
    perm = _block_perm(gt.shape[-2], s)
    return gt[..., perm, :]


def flip_ce_maps(
    probs: Tensor,
    gt: np.ndarray,
    s: int,
    ignore_index: int = DEFAULT_IGNORE,
) -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Cross-entropy maps against the row- and column-flipped ground truth.

    Returns (L_row, L_col, gt_row, gt_col); the flipped label arrays are
    returned so callers can mask ignored positions under each flip.
    """
    gt = np.asarray(gt)
    gt_row = row_flip(gt, s)
    gt_col = col_flip(gt, s)
    l_row = cross_entropy_map(probs, gt_row, ignore_index)
    l_col = cross_entropy_map(probs, gt_col, ignore_index)
    return l_row, l_col, gt_row, gt_col


def nms_filter(loss_map: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of pixels that are >= every value in their kxk
    neighborhood (clipped at the image border). Non-strict comparison, so
    plateaus are fully kept; k=1 keeps everything."""
    if k < 1 or k % 2 == 0:
        raise ValueError("nms window must be odd and >= 1")
    loss_map = np.asarray(loss_map, dtype=np.float64)
    if loss_map.ndim != 2:
        raise ValueError(f"loss map must be 2-d, got shape {loss_map.shape}")
    h, w = loss_map.shape
    r = k // 2
    local_max = np.full((h, w), -np.inf)
    for di in range(-r, r + 1):
        src_r = slice(max(0, di), h + min(0, di))
        dst_r = slice(max(0, -di), h + min(0, -di))
        for dj in range(-r, r + 1):
            src_c = slice(max(0, dj), w + min(0, dj))
            dst_c = slice(max(0, -dj), w + min(0, -dj))
            np.maximum(local_max[dst_r, dst_c], loss_map[src_r, src_c],
                       out=local_max[dst_r, dst_c])
    return loss_map >= local_max


def select_hard(values: np.ndarray, keep_fraction: float, min_kept: int) -> np.ndarray:
    """Indices of the top max(ceil(theta*K), min(min_kept, K)) values.

    ``values`` must be listed in row-major pixel order; ties are broken
    toward the earlier position, which makes the selection deterministic.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    values = np.asarray(values, dtype=np.float64)
    kept = values.size
    if kept == 0:
        return np.empty(0, dtype=np.int64)
    n_sel = max(math.ceil(keep_fraction * kept), min(min_kept, kept))
    order = np.argsort(-values, kind="stable")
    return order[:n_sel]


def _selection_mask(
    loss_values: np.ndarray,
    flipped_gt: np.ndarray,
    cfg: BclConfig,
    ignore_index: int,
) -> np.ndarray:
    """Per-sample hard-pixel mask over a [N,H,W] detached loss batch."""
    n = loss_values.shape[0]
    mask = np.zeros(loss_values.shape, dtype=bool)
    for i in range(n):
        vals = loss_values[i]
        kept = nms_filter(vals, cfg.nms_window)
        kept &= flipped_gt[i] != ignore_index
        kept &= vals > 0.0
        pos = np.argwhere(kept)
        if pos.size == 0:
            continue
        sel = select_hard(vals[kept], cfg.keep_fraction, cfg.min_kept)
        chosen = pos[sel]
        mask[i, chosen[:, 0], chosen[:, 1]] = True
    return mask


def hard_sample_masks(
    probs: Tensor,
    gt: np.ndarray,
    cfg: BclConfig,
    ignore_index: int = DEFAULT_IGNORE,
) -> tuple[np.ndarray, np.ndarray]:
    """(row mask, col mask) of the hard pixels the loss would select."""
    l_row, l_col, gt_row, gt_col = flip_ce_maps(probs, gt, cfg.step, ignore_index)
    return (
        _selection_mask(l_row.data, gt_row, cfg, ignore_index),
        _selection_mask(l_col.data, gt_col, cfg, ignore_index),
    )


def boundary_loss(
    probs: Tensor,
    gt: np.ndarray,
    cfg: BclConfig,
    ignore_index: int = DEFAULT_IGNORE,
) -> Tensor:
    """lambda1 * mean(selected L_row) + lambda2 * mean(selected L_col).

    Each mean divides by the selected-pixel count summed over the batch;
    an empty selection contributes 0. Gradients flow only through the
    selected cross-entropy values.
    """
    l_row, l_col, gt_row, gt_col = flip_ce_maps(probs, gt, cfg.step, ignore_index)
    terms = []
    for lmap, flipped in ((l_row, gt_row), (l_col, gt_col)):
        mask = _selection_mask(lmap.data, flipped, cfg, ignore_index)
        count = int(mask.sum())
        if count == 0:
            terms.append(Tensor(np.zeros(1)))
        else:
            terms.append((lmap * Tensor(mask.astype(np.float64))).sum() / float(count))
    return terms[0] * cfg.lambda1 + terms[1] * cfg.lambda2


def total_loss(
    logits: Tensor,
    gt: np.ndarray,
    cfg: BclConfig,
    ignore_index: int = DEFAULT_IGNORE,
) -> Tensor:
    """mean cross-entropy + alpha * boundary term, both over softmax probs."""
    loss, _, _ = loss_components(logits, gt, cfg, ignore_index)
    return loss


def loss_components(
    logits: Tensor,
    gt: np.ndarray,
    cfg: BclConfig,
    ignore_index: int = DEFAULT_IGNORE,
) -> tuple[Tensor, float, float]:
    """(total, cross-entropy value, boundary value) for trace logging."""
    if logits.ndim != 4:
        raise ValueError(f"logits must be [N,M,H,W], got shape {logits.shape}")
    gt = np.asarray(gt)
    probs = softmax_channels(logits)
    ce_map = cross_entropy_map(probs, gt, ignore_index)
    valid = gt != ignore_index
    count = int(valid.sum())
    if count == 0:
        mean_ce = Tensor(np.zeros(1))
    else:
        mean_ce = (ce_map * Tensor(valid.astype(np.float64))).sum() / float(count)
    if cfg.alpha == 0.0:
        return mean_ce, mean_ce.item(), 0.0
    lb = boundary_loss(probs, gt, cfg, ignore_index)
    return mean_ce + lb * cfg.alpha, mean_ce.item(), lb.item()
