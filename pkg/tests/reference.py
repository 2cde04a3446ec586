"""Brute-force reference implementations used as oracles by the test suite.

Everything in this module is written as plain loops over scalars, straight
from the defining formulas, so that agreement with the vectorized package
code is meaningful. Nothing here imports from sdformer.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# linear algebra / conv


def matmul_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def conv2d_loop(x, w, b=None, stride=1, padding=0, groups=1):
    """Cross-correlation (deep-learning convention), channels-first (C,H,W)."""
    c_in, h, w_in = x.shape
    c_out, c_in_g, kh, kw = w.shape
    assert c_in % groups == 0 and c_out % groups == 0
    assert c_in_g == c_in // groups
    xp = np.zeros((c_in, h + 2 * padding, w_in + 2 * padding), dtype=np.float64)
    xp[:, padding : padding + h, padding : padding + w_in] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w_in + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo), dtype=np.float64)
    per_g_out = c_out // groups
    per_g_in = c_in // groups
    for oc in range(c_out):
        g = oc // per_g_out
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for ic in range(per_g_in):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += float(w[oc, ic, dy, dx]) * float(
                                xp[g * per_g_in + ic, oy * stride + dy, ox * stride + dx]
                            )
                out[oc, oy, ox] = acc + (float(b[oc]) if b is not None else 0.0)
    return out


def layer_norm_loop(x, gamma, beta, eps=1e-5):
    """Normalize across the channel axis independently at each position."""
    c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            col = [float(x[k, i, j]) for k in range(c)]
            mu = sum(col) / c
            var = sum((v - mu) ** 2 for v in col) / c
            inv = 1.0 / math.sqrt(var + eps)
            for k in range(c):
                out[k, i, j] = (col[k] - mu) * inv * float(gamma[k]) + float(beta[k])
    return out


def softmax_loop(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    out = np.zeros_like(flat)
    for r in range(flat.shape[0]):
        m = max(flat[r])
        e = [math.exp(v - m) for v in flat[r]]
        s = sum(e)
        out[r] = [v / s for v in e]
    return out.reshape(x.shape)


def gelu_scalar(v: float) -> float:
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


# ---------------------------------------------------------------------------
# optimizer


def adam_sequence(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, w0=0.0):
    """Run Adam on one scalar coordinate given its gradient per step.

    Returns the weight value after each step.
    """
    m = v = 0.0
    w = w0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(w)
    return out


# ---------------------------------------------------------------------------
# loss / metrics


def completion_loss_scalar(pred, gt, mask) -> float:
    """Sum of L1 and L2 penalties over valid pixels, averaged over |S|."""
    total = 0.0
    count = 0
    p = pred.reshape(-1)
    g = gt.reshape(-1)
    m = mask.reshape(-1)
    for i in range(p.size):
        if m[i]:
            d = float(p[i]) - float(g[i])
            total += abs(d) + d * d
            count += 1
    return total / count


def metrics_scalar(preds, gts, masks=None, unit="m"):
    """Pixel-pooled Eq. 6 metrics over a list of maps, via plain loops.

    Non-positive predictions at valid pixels count as warnings; their inverse
    is computed after clamping to 1e-3 m while rmse/mae/rel use the raw value,
    and they always fail the delta thresholds.
    """
    scale = 1000.0 if unit == "mm" else 1.0
    se = ae = ise = iae = rel = 0.0
    d1 = d2 = d3 = 0
    n = 0
    warn = 0
    for idx in range(len(preds)):
        p = preds[idx].reshape(-1)
        g = gts[idx].reshape(-1)
        m = (masks[idx].reshape(-1) if masks is not None else g > 0)
        for i in range(p.size):
            if not m[i]:
                continue
            pm = float(p[i])   # metres
            gm = float(g[i])
            d = (pm - gm) * scale
            se += d * d
            ae += abs(d)
            rel += abs(pm - gm) / gm
            if pm <= 0:
                warn += 1
                pm_inv = 1e-3
                ratio = math.inf
            else:
                pm_inv = pm
                ratio = max(pm / gm, gm / pm)
            # inverse-depth errors always in 1/km, from the metre values
            ip = 1000.0 / pm_inv
            ig = 1000.0 / gm
            ise += (ip - ig) ** 2
            iae += abs(ip - ig)
            if ratio < 1.25:
                d1 += 1
            if ratio < 1.25**2:
                d2 += 1
            if ratio < 1.25**3:
                d3 += 1
            n += 1
    return {
        "rmse": math.sqrt(se / n),
        "mae": ae / n,
        "irmse": math.sqrt(ise / n),
        "imae": iae / n,
        "rel": rel / n,
        "d1": 100.0 * d1 / n,
        "d2": 100.0 * d2 / n,
        "d3": 100.0 * d3 / n,
        "pixels": n,
        "samples": len(preds),
        "warnings": warn,
    }


def nn_fill_loop(sparse: np.ndarray) -> np.ndarray:
    """Nearest-valid-pixel fill by exhaustive Euclidean search.

    Where several valid pixels tie on distance the choice is ambiguous, so
    tests built on this oracle must avoid ties or compare distances only.
    """
    c, h, w = sparse.shape
    assert c == 1
    s = sparse[0]
    valid = [(i, j) for i in range(h) for j in range(w) if s[i, j] > 0]
    out = np.zeros_like(s)
    for i in range(h):
        for j in range(w):
            best = None
            bd = math.inf
            for (vi, vj) in valid:
                d = (vi - i) ** 2 + (vj - j) ** 2
                if d < bd:
                    bd = d
                    best = (vi, vj)
            out[i, j] = s[best]
    return out[None]
