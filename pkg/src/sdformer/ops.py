"""Differentiable map operations: convolution, normalization, activations,
resampling rearrangements and window tiling.

All operations take channel-first single-map tensors (C, H, W) and are
implemented with vectorized numpy; each records a hand-derived backward rule.
The 3x3 convolutions use a shift-and-accumulate scheme (one GEMM or fused
multiply-add per kernel offset) instead of im2col, which keeps peak memory
flat at large resolutions.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ConfigError
from .tensor import Tensor, make_result

__all__ = [
    "conv2d",
    "layer_norm",
    "gelu",
    "leaky_relu",
    "softmax",
    "pixel_unshuffle",
    "pixel_shuffle",
    "window_partition",
    "window_merge",
    "pad2d",
    "crop2d",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


# -- convolution ----------------------------------------------------------------


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of a (C_in, H, W) map with (C_out, C_in/groups, k, k)."""
    xd, wd = x.data, weight.data
    if xd.ndim != 3:
        raise ConfigError(f"conv2d input must be 3-D (C,H,W), got shape {xd.shape}")
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise ConfigError(f"conv2d weight must be (C_out,C_in/g,k,k), got {wd.shape}")
    c_in, h, w = xd.shape
    c_out, cig, k, _ = wd.shape
    if c_in % groups != 0 or c_out % groups != 0:
        raise ConfigError(
            f"conv2d channels not divisible by groups: C_in={c_in}, C_out={c_out}, groups={groups}"
        )
    if cig != c_in // groups:
        raise ConfigError(
            f"conv2d weight in-channels {cig} != C_in/groups = {c_in}//{groups}"
        )
    if bias is not None and bias.data.shape != (c_out,):
        raise ConfigError(f"conv2d bias shape {bias.data.shape} != (C_out,) = ({c_out},)")

    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigError(f"conv2d output empty for input {h}x{w}, k={k}, stride={stride}")

    xp = _pad_zero(xd, padding)
    out = np.zeros((c_out, ho, wo), dtype=xd.dtype)
    out2 = out.reshape(c_out, -1)
    cog = c_out // groups
    depthwise = groups == c_in and cig == 1 and cog == 1
    wg = wd.reshape(groups, cog, cig, k, k)

    for dy in range(k):
        for dx in range(k):
            xs = xp[:, dy : dy + stride * ho : stride, dx : dx + stride * wo : stride]
            if groups == 1:
                out2 += wd[:, :, dy, dx] @ xs.reshape(c_in, -1)
            elif depthwise:
                out += wd[:, 0, dy, dx][:, None, None] * xs
            else:
                xg = np.ascontiguousarray(xs).reshape(groups, cig, -1)
                out2.reshape(groups, cog, -1)[...] += np.einsum(
                    "goi,gip->gop", wg[:, :, :, dy, dx], xg
                )
    if bias is not None:
        out += bias.data[:, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g2 = g.reshape(c_out, -1)
        xp_b = _pad_zero(x.data, padding)
        dxp = np.zeros_like(xp_b)
        dw = np.zeros_like(wd)
        dwg = dw.reshape(groups, cog, cig, k, k)
        for dy in range(k):
            for dx in range(k):
                sl = (
                    slice(None),
                    slice(dy, dy + stride * ho, stride),
                    slice(dx, dx + stride * wo, stride),
                )
                xs = xp_b[sl]
                if groups == 1:
                    xs2 = xs.reshape(c_in, -1)
                    dw[:, :, dy, dx] = g2 @ xs2.T
                    dxp[sl] += (wd[:, :, dy, dx].T @ g2).reshape(c_in, ho, wo)
                elif depthwise:
                    dw[:, 0, dy, dx] = (g * xs).sum(axis=(1, 2))
                    dxp[sl] += wd[:, 0, dy, dx][:, None, None] * g
                else:
                    xg = np.ascontiguousarray(xs).reshape(groups, cig, -1)
                    gg = g2.reshape(groups, cog, -1)
                    dwg[:, :, :, dy, dx] = np.einsum("gop,gip->goi", gg, xg)
                    dxp[sl] += np.einsum(
                        "goi,gop->gip", wg[:, :, :, dy, dx], gg
                    ).reshape(c_in, ho, wo)
        dx_ = dxp if padding == 0 else dxp[:, padding : padding + h, padding : padding + w]
        db = g.sum(axis=(1, 2)) if bias is not None else None
        grads = (np.ascontiguousarray(dx_), dw)
        return grads if bias is None else grads + (db,)

    return make_result(out, "conv2d", inputs, vjp)


def _pad_zero(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (p, p), (p, p)))


# -- normalization ----------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the channel axis at each spatial location, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    xd = x.data
    c = xd.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ConfigError(
            f"layer_norm affine shape mismatch: input C={c}, gamma {gamma.data.shape}, beta {beta.data.shape}"
        )
    mu = xd.mean(axis=0)
    var = xd.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = (xd - mu) * inv_std
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def vjp(g):
        gx = g * gamma.data[:, None, None]
        m1 = gx.mean(axis=0)
        m2 = (gx * xhat).mean(axis=0)
        dx = inv_std * (gx - m1 - xhat * m2)
        dgamma = (g * xhat).sum(axis=(1, 2))
        dbeta = g.sum(axis=(1, 2))
        return dx, dgamma, dbeta

    return make_result(out, "layer_norm", (x, gamma, beta), vjp)


# -- activations ----------------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-function GELU (not the tanh approximation)."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def vjp(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        return (g * (phi + xd * pdf),)

    return make_result(xd * phi, "gelu", (x,), vjp)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    out = np.where(xd >= 0, xd, slope * xd)

    def vjp(g):
        return (np.where(xd >= 0, g, np.asarray(slope, dtype=g.dtype) * g),)

    return make_result(out.astype(xd.dtype, copy=False), "leaky_relu", (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ConfigError(f"softmax axis {axis} invalid for shape {xd.shape}")
    y = xd - xd.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return make_result(y, "softmax", (x,), vjp)


# -- resampling rearrangements -----------------------------------------------------


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: (C, H, W) -> (C*r*r, H/r, W/r).

    Output channel c*r*r + dy*r + dx holds the input sub-grid at offset
    (dy, dx); exact inverse of :func:`pixel_shuffle`.
    """
    c, h, w = x.data.shape
    if r < 1:
        raise ConfigError(f"pixel_unshuffle factor must be >= 1, got {r}")
    if h % r != 0:
        raise ConfigError(f"pixel_unshuffle: height {h} not divisible by {r}")
    if w % r != 0:
        raise ConfigError(f"pixel_unshuffle: width {w} not divisible by {r}")
    out = _unshuffle(x.data, r)

    def vjp(g):
        return (_shuffle(g, r),)

    return make_result(out, "pixel_unshuffle", (x,), vjp)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: (C*r*r, H, W) -> (C, H*r, W*r)."""
    c, h, w = x.data.shape
    if r < 1:
        raise ConfigError(f"pixel_shuffle factor must be >= 1, got {r}")
    if c % (r * r) != 0:
        raise ConfigError(f"pixel_shuffle: channels {c} not divisible by r*r = {r * r}")
    out = _shuffle(x.data, r)

    def vjp(g):
        return (_unshuffle(g, r),)

    return make_result(out, "pixel_shuffle", (x,), vjp)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    c, h, w = a.shape
    v = a.reshape(c, h // r, r, w // r, r)
    return np.ascontiguousarray(v.transpose(0, 2, 4, 1, 3)).reshape(c * r * r, h // r, w // r)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    c, h, w = a.shape
    v = a.reshape(c // (r * r), r, r, h, w)
    return np.ascontiguousarray(v.transpose(0, 3, 1, 4, 2)).reshape(c // (r * r), h * r, w * r)


# -- window tiling ----------------------------------------------------------------


def window_partition(x: Tensor, dh: int, dw: int) -> Tensor:
    """Tile (C, H, W) into (N, dh*dw, C) non-overlapping windows, N = HW/(dh*dw)."""
    c, h, w = x.data.shape
    if h % dh != 0 or w % dw != 0:
        raise ConfigError(
            f"window_partition: map {h}x{w} not tileable by window [{dh},{dw}]"
        )
    out = _to_windows(x.data, dh, dw)

    def vjp(g):
        return (_from_windows(g, c, h, w, dh, dw),)

    return make_result(out, "window_partition", (x,), vjp)


def window_merge(win: Tensor, h: int, w: int, dh: int, dw: int) -> Tensor:
    """Inverse of :func:`window_partition` back to (C, h, w)."""
    n, l, c = win.data.shape
    if l != dh * dw or h * w != n * l or h % dh != 0 or w % dw != 0:
        raise ConfigError(
            f"window_merge: {n} windows of {l} with window [{dh},{dw}] do not cover {h}x{w}"
        )
    out = _from_windows(win.data, c, h, w, dh, dw)

    def vjp(g):
        return (_to_windows(g, dh, dw),)

    return make_result(out, "window_merge", (win,), vjp)


def _to_windows(a: np.ndarray, dh: int, dw: int) -> np.ndarray:
    c, h, w = a.shape
    v = a.reshape(c, h // dh, dh, w // dw, dw)
    v = v.transpose(1, 3, 2, 4, 0)  # (nh, nw, dh, dw, c)
    return np.ascontiguousarray(v).reshape((h // dh) * (w // dw), dh * dw, c)


def _from_windows(win: np.ndarray, c: int, h: int, w: int, dh: int, dw: int) -> np.ndarray:
    v = win.reshape(h // dh, w // dw, dh, dw, c)
    v = v.transpose(4, 0, 2, 1, 3)  # (c, nh, dh, nw, dw)
    return np.ascontiguousarray(v).reshape(c, h, w)


# -- spatial padding ----------------------------------------------------------------


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "zero") -> Tensor:
    """Pad spatial axes by (top, bottom, left, right); zero or reflect."""
    top, bottom, left, right = pads
    c, h, w = x.data.shape
    if min(pads) < 0:
        raise ConfigError(f"pad2d pads must be non-negative, got {pads}")
    if mode == "zero":
        out = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))

        def vjp(g):
            return (np.ascontiguousarray(g[:, top : top + h, left : left + w]),)

        return make_result(out, "pad2d", (x,), vjp)
    if mode == "reflect":
        ri = _reflect_index(h, top, bottom)
        ci = _reflect_index(w, left, right)
        out = np.ascontiguousarray(x.data[:, ri[:, None], ci[None, :]])

        def vjp(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, (slice(None), ri[:, None], ci[None, :]), g)
            return (dx,)

        return make_result(out, "pad2d", (x,), vjp)
    raise ConfigError(f"pad2d mode must be 'zero' or 'reflect', got {mode!r}")


def crop2d(x: Tensor, crops: tuple[int, int, int, int]) -> Tensor:
    """Remove (top, bottom, left, right) rows/columns; inverts a recorded pad."""
    top, bottom, left, right = crops
    c, h, w = x.data.shape
    if min(crops) < 0 or top + bottom >= h or left + right >= w:
        raise ConfigError(f"crop2d crops {crops} invalid for map {h}x{w}")
    out = np.ascontiguousarray(x.data[:, top : h - bottom, left : w - right])

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[:, top : h - bottom, left : w - right] = g
        return (dx,)

    return make_result(out, "crop2d", (x,), vjp)


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    """Source indices for edge-free reflection over [-before, n+after)."""
    if n == 1:
        return np.zeros(1 + before + after, dtype=np.intp)
    idx = np.mod(np.arange(-before, n + after), 2 * (n - 1))
    return (n - 1) - np.abs((n - 1) - idx)
