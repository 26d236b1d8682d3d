"""Desk-scale dual-resolution semantic segmentation: a from-scratch
float64 autodiff engine, a pooling-pyramid fusion module for
low-resolution feature maps, a boundary-corrected training loss, a
synthetic scene generator, and a training/evaluation harness."""

from .boundary import (
    BclConfig,
    boundary_loss,
    col_flip,
    flip_ce_maps,
    nms_filter,
    row_flip,
    select_hard,
    total_loss,
)
from .fusion import GLOBAL, LmfmConfig, init_lmfm, lmfm_cost, lmfm_forward
from .labels import LabelMap, boundary_mask
from .network import NetConfig, build, count_cost, forward, load_checkpoint, restore, save_checkpoint
from .ops import (
    BatchNormParams,
    ConvParams,
    avg_pool2d,
    batch_norm,
    bilinear_upsample,
    conv2d,
    cross_entropy_map,
    global_avg_pool,
    relu,
    sgd_step,
    softmax_channels,
)
from .tensor import NonFiniteError, Tape, TapeError, Tensor, backward, finite_diff_grad

__version__ = "0.1.0"
