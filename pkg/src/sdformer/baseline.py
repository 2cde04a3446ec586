"""Nearest-neighbor sparse-fill baseline used as the accuracy floor."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError

__all__ = ["nn_fill"]


def nn_fill(sparse: np.ndarray) -> np.ndarray:
    """Fill every pixel with the value of its nearest valid sparse pixel
    (Euclidean distance, exact via distance transform)."""
    if sparse.ndim != 3 or sparse.shape[0] != 1:
        raise ConfigError(f"nn_fill: sparse must be 1xHxW, got {sparse.shape}")
    s = sparse[0]
    if not (s > 0).any():
        raise ConfigError("nn_fill: sparse map has no valid pixels")
    _, (iy, ix) = ndimage.distance_transform_edt(s <= 0, return_indices=True)
    return s[iy, ix][None].astype(sparse.dtype)
