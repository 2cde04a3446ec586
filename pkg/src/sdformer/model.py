"""The SDformer model.

Parameter shapes are enumerated by a single generator (`iter_param_shapes`)
that `build_model`, `count_params` and the checkpoint loader all consume, so
the weight table, the counter and the forward pass cannot drift apart.

Topology (channels at base width C):

    input:  sparse -> 3x3 conv+LeakyReLU -> C/2   rgb -> same -> C/2; concat = P0 (C)
    enc1 (n1 blocks @ C)  -> down -> enc2 (n2 @ 2C) -> down -> enc3 (n3 @ 4C)
    -> down -> latent (n4 @ 8C)
    -> up -> concat skip3 -> 1x1 reduce -> dec3 (n3 @ 4C)
    -> up -> concat skip2 -> 1x1 reduce -> dec2 (n2 @ 2C)
    -> up -> concat skip1 ->              dec1 (n1 @ 2C) = P_d
    concat P0 -> refinement (@ 3C, stage-1 windows) -> 3x3 conv -> 1 channel

Down/up-sampling is 3x3 conv then pixel unshuffle/shuffle; odd extents are
reflect-padded to even before a downsample and cropped back after the
matching upsample.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import ops
from .config import ModelConfig, StageSpec
from .errors import ConfigError
from .tensor import Tensor, concat, split

__all__ = [
    "Model",
    "LevelPlan",
    "iter_param_shapes",
    "build_model",
    "model_forward",
    "block_forward",
    "level_plan",
    "count_params",
    "count_macs",
    "describe",
]


@dataclass
class Model:
    """Config plus the ordered name -> Tensor weight table."""

    config: ModelConfig
    weights: "OrderedDict[str, Tensor]"

    def __getitem__(self, name: str) -> Tensor:
        return self.weights[name]

    def parameters(self):
        return self.weights.items()

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.weights.values():
            t.requires_grad = flag


# -- parameter enumeration ----------------------------------------------------------


def iter_param_shapes(cfg: ModelConfig):
    """Yield (name, shape) for every parameter, in forward-pass order."""
    c = cfg.base_channels
    yield "input.sparse.weight", (c // 2, 1, 3, 3)
    yield "input.sparse.bias", (c // 2,)
    yield "input.rgb.weight", (c // 2, 3, 3, 3)
    yield "input.rgb.bias", (c // 2,)
    for lvl in (1, 2, 3):
        ch = cfg.channels_at_level(lvl)
        for b in range(cfg.blocks[lvl - 1]):
            yield from _iter_block(f"enc{lvl}.b{b}", ch, cfg)
        yield f"down{lvl}.conv.weight", (ch // 2, ch, 3, 3)
        yield f"down{lvl}.conv.bias", (ch // 2,)
    for b in range(cfg.blocks[3]):
        yield from _iter_block(f"lat.b{b}", 8 * c, cfg)
    yield "up3.conv.weight", (16 * c, 8 * c, 3, 3)
    yield "up3.conv.bias", (16 * c,)
    yield "dec3.reduce.weight", (4 * c, 8 * c, 1, 1)
    yield "dec3.reduce.bias", (4 * c,)
    for b in range(cfg.blocks[2]):
        yield from _iter_block(f"dec3.b{b}", 4 * c, cfg)
    yield "up2.conv.weight", (8 * c, 4 * c, 3, 3)
    yield "up2.conv.bias", (8 * c,)
    yield "dec2.reduce.weight", (2 * c, 4 * c, 1, 1)
    yield "dec2.reduce.bias", (2 * c,)
    for b in range(cfg.blocks[1]):
        yield from _iter_block(f"dec2.b{b}", 2 * c, cfg)
    yield "up1.conv.weight", (4 * c, 2 * c, 3, 3)
    yield "up1.conv.bias", (4 * c,)
    for b in range(cfg.blocks[0]):
        yield from _iter_block(f"dec1.b{b}", 2 * c, cfg)
    for b in range(cfg.refinement_blocks):
        yield from _iter_block(f"ref.b{b}", 3 * c, cfg)
    yield "head.conv.weight", (1, 3 * c, 3, 3)
    yield "head.conv.bias", (1,)


def _iter_block(prefix: str, ch: int, cfg: ModelConfig):
    h = cfg.hidden_width(ch)
    yield f"{prefix}.ln1.gamma", (ch,)
    yield f"{prefix}.ln1.beta", (ch,)
    yield f"{prefix}.attn.qkv_point.weight", (3 * ch, ch, 1, 1)
    yield f"{prefix}.attn.qkv_depth.weight", (3 * ch, 1, 3, 3)
    yield f"{prefix}.attn.proj.weight", (ch, ch, 1, 1)
    yield f"{prefix}.ln2.gamma", (ch,)
    yield f"{prefix}.ln2.beta", (ch,)
    if cfg.ffn_variant == "gffn":
        yield f"{prefix}.ffn.expand.weight", (2 * h, ch, 1, 1)
        yield f"{prefix}.ffn.depth.weight", (2 * h, 1, 3, 3)
        yield f"{prefix}.ffn.project.weight", (ch, h, 1, 1)
    else:
        yield f"{prefix}.ffn.fc1.weight", (h, ch, 1, 1)
        yield f"{prefix}.ffn.fc2.weight", (ch, h, 1, 1)


# -- construction ----------------------------------------------------------------


def build_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministic initialization: He fan-in truncated normal (cut at 2
    sigma) for conv weights, ones for LN gamma, zeros for biases and beta.
    Fan-in scaling keeps activation magnitude roughly constant through the
    depth of the U-net, which matters for convergence at small step budgets.
    """
    rng = np.random.default_rng(seed)
    weights: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in iter_param_shapes(cfg):
        leaf = name.rsplit(".", 1)[1]
        if leaf == "weight":
            fan_in = int(np.prod(shape[1:]))  # (out, in/groups, kh, kw)
            data = _trunc_normal(rng, shape, math.sqrt(2.0 / fan_in)).astype(dtype)
        elif leaf == "gamma":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        weights[name] = Tensor(data, requires_grad=True)
    return Model(cfg, weights)


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


# -- spatial planning ----------------------------------------------------------------


@dataclass
class LevelPlan:
    """Feature-map sizes per level and the pads applied before each downsample."""

    sizes: list[tuple[int, int]]  # (H, W) at levels 1..4
    pads: list[tuple[int, int]]  # (bottom, right) recorded at down 1..3


def level_plan(cfg: ModelConfig, h: int, w: int, validate: bool = True) -> LevelPlan:
    if h < 8 or w < 8:
        raise ConfigError(f"input {h}x{w} too small for a 4-level model")
    sizes = [(h, w)]
    pads = []
    ch, cw = h, w
    for _ in range(3):
        pb, pr = ch % 2, cw % 2
        pads.append((pb, pr))
        ch, cw = (ch + pb) // 2, (cw + pr) // 2
        sizes.append((ch, cw))
    plan = LevelPlan(sizes, pads)
    if validate:
        validate_windows(cfg, plan)
    return plan


def validate_windows(cfg: ModelConfig, plan: LevelPlan) -> None:
    """Every window of every active stage must tile its level's feature map."""
    for s in range(1, 5):
        active = cfg.blocks[s - 1] > 0 or (s == 1 and cfg.refinement_blocks > 0)
        if not active:
            continue
        hh, ww = plan.sizes[s - 1]
        for i, (dh, dw) in enumerate(cfg.stage(s).windows):
            if hh % dh != 0 or ww % dw != 0:
                raise ConfigError(
                    f"stage {s} window {i + 1} [{dh},{dw}] does not tile the "
                    f"level-{s} feature map {hh}x{ww}"
                )


# -- forward pass ----------------------------------------------------------------


def model_forward(model: Model, sparse: Tensor, rgb: Tensor) -> Tensor:
    """Dense depth prediction, 1xHxW, no output activation."""
    cfg, w = model.config, model.weights
    if sparse.data.ndim != 3 or sparse.shape[0] != 1:
        raise ConfigError(f"sparse input must be 1xHxW, got {sparse.shape}")
    if rgb.data.ndim != 3 or rgb.shape[0] != 3:
        raise ConfigError(f"rgb input must be 3xHxW, got {rgb.shape}")
    if sparse.shape[1:] != rgb.shape[1:]:
        raise ConfigError(f"sparse {sparse.shape} and rgb {rgb.shape} spatial sizes differ")
    h, w_ = sparse.shape[1], sparse.shape[2]
    plan = level_plan(cfg, h, w_)

    ps = ops.leaky_relu(ops.conv2d(sparse, w["input.sparse.weight"], w["input.sparse.bias"], padding=1))
    pc = ops.leaky_relu(ops.conv2d(rgb, w["input.rgb.weight"], w["input.rgb.bias"], padding=1))
    p0 = concat([ps, pc], axis=0)

    x = p0
    skips = []
    for lvl in (1, 2, 3):
        spec = cfg.stage(lvl)
        for b in range(cfg.blocks[lvl - 1]):
            x = block_forward(x, w, f"enc{lvl}.b{b}", spec, cfg)
        skips.append(x)
        x = _down(x, w, f"down{lvl}", plan.pads[lvl - 1])

    spec4 = cfg.stage(4)
    for b in range(cfg.blocks[3]):
        x = block_forward(x, w, f"lat.b{b}", spec4, cfg)

    for lvl in (3, 2):
        x = _up(x, w, f"up{lvl}", plan.pads[lvl - 1])
        x = concat([x, skips[lvl - 1]], axis=0)
        x = ops.conv2d(x, w[f"dec{lvl}.reduce.weight"], w[f"dec{lvl}.reduce.bias"])
        spec = cfg.stage(lvl)
        for b in range(cfg.blocks[lvl - 1]):
            x = block_forward(x, w, f"dec{lvl}.b{b}", spec, cfg)

    x = _up(x, w, "up1", plan.pads[0])
    x = concat([x, skips[0]], axis=0)
    spec1 = cfg.stage(1)
    for b in range(cfg.blocks[0]):
        x = block_forward(x, w, f"dec1.b{b}", spec1, cfg)

    pr = concat([x, p0], axis=0)
    ref_spec = StageSpec(cfg.refinement_blocks, cfg.refinement_heads(), cfg.windows[0])
    for b in range(cfg.refinement_blocks):
        pr = block_forward(pr, w, f"ref.b{b}", ref_spec, cfg)

    return ops.conv2d(pr, w["head.conv.weight"], w["head.conv.bias"], padding=1)


def _down(x: Tensor, w, prefix: str, pad: tuple[int, int]) -> Tensor:
    pb, pr = pad
    if pb or pr:
        x = ops.pad2d(x, (0, pb, 0, pr), mode="reflect")
    x = ops.conv2d(x, w[f"{prefix}.conv.weight"], w[f"{prefix}.conv.bias"], padding=1)
    return ops.pixel_unshuffle(x, 2)


def _up(x: Tensor, w, prefix: str, pad: tuple[int, int]) -> Tensor:
    x = ops.conv2d(x, w[f"{prefix}.conv.weight"], w[f"{prefix}.conv.bias"], padding=1)
    x = ops.pixel_shuffle(x, 2)
    pb, pr = pad
    if pb or pr:
        x = ops.crop2d(x, (0, pb, 0, pr))
    return x


def block_forward(x: Tensor, w, prefix: str, spec: StageSpec, cfg: ModelConfig) -> Tensor:
    """One pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x))."""
    y = ops.layer_norm(x, w[f"{prefix}.ln1.gamma"], w[f"{prefix}.ln1.beta"])
    x = x + _attention(y, w, f"{prefix}.attn", spec, cfg)
    y = ops.layer_norm(x, w[f"{prefix}.ln2.gamma"], w[f"{prefix}.ln2.beta"])
    return x + _ffn(y, w, f"{prefix}.ffn", cfg)


def _attention(x: Tensor, w, prefix: str, spec: StageSpec, cfg: ModelConfig) -> Tensor:
    c, h, w_ = x.shape
    qkv = ops.conv2d(x, w[f"{prefix}.qkv_point.weight"])
    qkv = ops.conv2d(qkv, w[f"{prefix}.qkv_depth.weight"], padding=1, groups=3 * c)
    q, k, v = split(qkv, [c, c, c], axis=0)
    cb = c // 3
    qs = split(q, [cb] * 3, axis=0)
    ks = split(k, [cb] * 3, axis=0)
    vs = split(v, [cb] * 3, axis=0)
    outs = []
    for i in range(3):
        dh, dw = spec.windows[0] if cfg.attention_variant == "wsa" else spec.windows[i]
        outs.append(_window_attention(qs[i], ks[i], vs[i], dh, dw, spec.heads, h, w_))
    return ops.conv2d(concat(outs, axis=0), w[f"{prefix}.proj.weight"])


def _window_attention(q: Tensor, k: Tensor, v: Tensor, dh: int, dw: int, heads: int, h: int, w_: int) -> Tensor:
    cb = q.shape[0]
    dk = cb // heads
    l = dh * dw

    def to_heads(t: Tensor) -> Tensor:
        win = ops.window_partition(t, dh, dw)  # (N, L, cb)
        n = win.shape[0]
        return win.reshape(n, l, heads, dk).transpose((0, 2, 1, 3)).reshape(n * heads, l, dk)

    qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)
    scores = (qh @ kh.transpose((0, 2, 1))) * (1.0 / float(np.sqrt(dk)))
    out = ops.softmax(scores, axis=-1) @ vh
    n = out.shape[0] // heads
    out = out.reshape(n, heads, l, dk).transpose((0, 2, 1, 3)).reshape(n, l, cb)
    return ops.window_merge(out, h, w_, dh, dw)


def _ffn(x: Tensor, w, prefix: str, cfg: ModelConfig) -> Tensor:
    c = x.shape[0]
    hid = cfg.hidden_width(c)
    if cfg.ffn_variant == "mlp":
        y = ops.gelu(ops.conv2d(x, w[f"{prefix}.fc1.weight"]))
        return ops.conv2d(y, w[f"{prefix}.fc2.weight"])
    y = ops.conv2d(x, w[f"{prefix}.expand.weight"])
    y = ops.conv2d(y, w[f"{prefix}.depth.weight"], padding=1, groups=2 * hid)
    a, b = split(y, [hid, hid], axis=0)
    return ops.conv2d(ops.gelu(a) * b, w[f"{prefix}.project.weight"])


# -- counters ----------------------------------------------------------------


def count_params(cfg: ModelConfig) -> tuple[int, "OrderedDict[str, int]"]:
    """Total parameter count and per-module subtotals (first name segment)."""
    per: "OrderedDict[str, int]" = OrderedDict()
    total = 0
    for name, shape in iter_param_shapes(cfg):
        n = int(np.prod(shape))
        total += n
        mod = name.split(".", 1)[0]
        per[mod] = per.get(mod, 0) + n
    return total, per


def count_macs(cfg: ModelConfig, h: int, w: int) -> dict:
    """Analytic multiply-accumulate count for one forward pass at HxW.

    Covers all convolutions and the attention score/value products
    (2 * dh * dw * branch_channels * H * W per branch); LayerNorm,
    activations and softmax are excluded. Reports flops = 2 * macs.
    """
    plan = level_plan(cfg, h, w)
    c = cfg.base_channels
    per: "OrderedDict[str, int]" = OrderedDict()

    def hw(level: int) -> int:
        hh, ww = plan.sizes[level - 1]
        return hh * ww

    per["input"] = 9 * 1 * (c // 2) * hw(1) + 9 * 3 * (c // 2) * hw(1)
    for lvl in (1, 2, 3):
        ch = cfg.channels_at_level(lvl)
        per[f"enc{lvl}"] = cfg.blocks[lvl - 1] * _block_macs(cfg, ch, hw(lvl), cfg.stage(lvl))
        per[f"down{lvl}"] = 9 * ch * (ch // 2) * hw(lvl)
    per["lat"] = cfg.blocks[3] * _block_macs(cfg, 8 * c, hw(4), cfg.stage(4))
    per["up3"] = 9 * (8 * c) * (16 * c) * hw(4)
    per["dec3"] = (8 * c) * (4 * c) * hw(3) + cfg.blocks[2] * _block_macs(cfg, 4 * c, hw(3), cfg.stage(3))
    per["up2"] = 9 * (4 * c) * (8 * c) * hw(3)
    per["dec2"] = (4 * c) * (2 * c) * hw(2) + cfg.blocks[1] * _block_macs(cfg, 2 * c, hw(2), cfg.stage(2))
    per["up1"] = 9 * (2 * c) * (4 * c) * hw(2)
    per["dec1"] = cfg.blocks[0] * _block_macs(cfg, 2 * c, hw(1), cfg.stage(1))
    ref_spec = StageSpec(cfg.refinement_blocks, cfg.refinement_heads(), cfg.windows[0])
    per["ref"] = cfg.refinement_blocks * _block_macs(cfg, 3 * c, hw(1), ref_spec)
    per["head"] = 9 * (3 * c) * 1 * hw(1)

    macs = sum(per.values())
    return {"macs": macs, "flops": 2 * macs, "per_module": per}


def _block_macs(cfg: ModelConfig, ch: int, hw: int, spec: StageSpec) -> int:
    hid = cfg.hidden_width(ch)
    m = ch * (3 * ch) * hw  # qkv pointwise
    m += 9 * (3 * ch) * hw  # qkv depthwise
    cb = ch // 3
    for i in range(3):
        dh, dw = spec.windows[0] if cfg.attention_variant == "wsa" else spec.windows[i]
        m += 2 * dh * dw * cb * hw  # scores + values, all heads
    m += ch * ch * hw  # output projection
    if cfg.ffn_variant == "gffn":
        m += ch * (2 * hid) * hw + 9 * (2 * hid) * hw + hid * ch * hw
    else:
        m += 2 * ch * hid * hw
    return m


# -- reporting ----------------------------------------------------------------


def describe(cfg: ModelConfig, h: int, w: int) -> str:
    """Human-readable architecture table for a given input size."""
    plan = level_plan(cfg, h, w, validate=False)
    total, per = count_params(cfg)
    lines = [
        f"SDformer  variant={cfg.attention_variant}+{cfg.ffn_variant}  C={cfg.base_channels}"
        f"  expansion={cfg.expansion}  input={h}x{w}",
        "",
        f"{'level':<8}{'channels':<10}{'size':<18}{'blocks':<8}{'heads':<7}windows",
    ]
    for s in range(1, 5):
        ch = cfg.channels_at_level(s)
        hh, ww = plan.sizes[s - 1]
        spec = cfg.stage(s)
        marks = []
        for dh, dw in spec.windows:
            ok = hh % dh == 0 and ww % dw == 0
            marks.append(f"[{dh},{dw}]{'' if ok else '!'}")
        pad = plan.pads[s - 2] if s > 1 else (0, 0)
        padnote = " (padded)" if s > 1 and (pad[0] or pad[1]) else ""
        lines.append(
            f"{s:<8}{ch:<10}{f'{hh}x{ww}{padnote}':<18}{spec.block_count:<8}{spec.heads:<7}"
            + " ".join(marks)
        )
    lines.append(
        f"{'dec1':<8}{2 * cfg.base_channels:<10}{f'{h}x{w}':<18}{cfg.blocks[0]:<8}"
        f"{cfg.heads[0]:<7}stage-1 windows"
    )
    lines.append(
        f"{'refine':<8}{3 * cfg.base_channels:<10}{f'{h}x{w}':<18}{cfg.refinement_blocks:<8}"
        f"{cfg.refinement_heads():<7}stage-1 windows"
    )
    try:
        validate_windows(cfg, plan)
        lines.append("window validation: ok")
    except ConfigError as e:
        lines.append(f"window validation: FAILED - {e}")
    lines.append("")
    lines.append("parameters by module:")
    for mod, n in per.items():
        lines.append(f"  {mod:<8}{n:>12,}")
    lines.append(f"  {'total':<8}{total:>12,}")
    return "\n".join(lines)
