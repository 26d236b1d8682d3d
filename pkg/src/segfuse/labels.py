"""Integer class-id grids with an ignore index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_IGNORE = 255


@dataclass
class LabelMap:
    """An HxW grid of class ids in [0, num_classes) plus an ignore index."""

    labels: np.ndarray
    num_classes: int
    ignore_index: int = DEFAULT_IGNORE

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError(f"labels must be 2-d, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("labels must be integers")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        valid = self.labels != self.ignore_index
        if np.any(valid & ((self.labels < 0) | (self.labels >= self.num_classes))):
            raise ValueError(f"label outside [0, {self.num_classes}) and not ignore")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def boundary_mask(labels: np.ndarray, ignore_index: int = DEFAULT_IGNORE) -> np.ndarray:
    """Non-ignored pixels with a non-ignored 4-neighbor of a different class."""
    labels = np.asarray(labels)
    valid = labels != ignore_index
    out = np.zeros(labels.shape, dtype=bool)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        rolled = np.roll(labels, shift, axis=axis)
        rolled_valid = np.roll(valid, shift, axis=axis)
        diff = (labels != rolled) & valid & rolled_valid
        # np.roll wraps; mask out the wrapped edge row/column.
        if axis == 0:
            if shift == 1:
                diff[0, :] = False
            else:
                diff[-1, :] = False
        else:
            if shift == 1:
                diff[:, 0] = False
            else:
                diff[:, -1] = False
        out |= diff
    return out
