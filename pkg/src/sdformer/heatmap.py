"""Depth-to-color rendering with a fixed piecewise-linear jet colormap.

Knot table (position in [0,1] -> RGB):

    0.00  (0,   0, 255)   blue
    0.25  (0, 255, 255)   cyan
    0.50  (0, 255,   0)   green
    0.75  (255, 255, 0)   yellow
    1.00  (255,   0, 0)   red

Depth maps linearly onto [0,1] over a shared (vmin, vmax) range; invalid
(zero) pixels render black. Sparse maps can be dilated so isolated dots stay
visible: each invalid pixel within Chebyshev radius (dilate-1)/2 of a valid
pixel takes that nearest pixel's color.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError

__all__ = ["JET_KNOTS", "colorize", "render_heatmap"]

JET_KNOTS = (
    (0.00, (0, 0, 255)),
    (0.25, (0, 255, 255)),
    (0.50, (0, 255, 0)),
    (0.75, (255, 255, 0)),
    (1.00, (255, 0, 0)),
)


def colorize(t: np.ndarray) -> np.ndarray:
    """Map values in [0,1] (clipped) through the jet knots; returns (..., 3) u8."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    pos = np.array([p for p, _ in JET_KNOTS])
    cols = np.array([c for _, c in JET_KNOTS], dtype=np.float64)
    out = np.empty(t.shape + (3,), dtype=np.float64)
    for ch in range(3):
        out[..., ch] = np.interp(t, pos, cols[:, ch])
    return np.round(out).astype(np.uint8)


def render_heatmap(
    depth: np.ndarray, vmin: float, vmax: float, dilate: int = 1
) -> np.ndarray:
    """Render (1,H,W) or (H,W) depth to a (3,H,W) float map in [0,1]."""
    if vmin >= vmax:
        raise ConfigError(f"heatmap range invalid: min {vmin} must be < max {vmax}")
    if dilate < 1 or dilate % 2 == 0:
        raise ConfigError(f"dilate {dilate} must be a positive odd size")
    d = depth[0] if depth.ndim == 3 else depth
    if d.size == 0:
        raise ConfigError("heatmap: empty depth map")
    valid = d > 0
    if dilate > 1 and valid.any():
        dist, (iy, ix) = ndimage.distance_transform_cdt(
            ~valid, metric="chessboard", return_indices=True
        )
        reach = dist <= (dilate - 1) // 2
        d = np.where(reach, d[iy, ix], d)
        valid = valid | reach

    t = (d - vmin) / (vmax - vmin)
    img = colorize(t).astype(np.float32) / 255.0
    img[~valid] = 0.0
    return img.transpose(2, 0, 1)
