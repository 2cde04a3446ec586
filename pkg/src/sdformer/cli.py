"""Command-line entry point.

Grammar: sdformer <describe|count|gradcheck|synth|train|eval|predict|heatmap>
[--config FILE] [--override key=value]... plus per-command flags.

Exit codes: 0 success, 1 validation error, 2 numeric failure. The environment
variable SDFORMER_THREADS caps per-sample worker parallelism (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as datakit
from . import heatmap as hm
from .baseline import nn_fill
from .checkpoint import checkpoint_from_model, load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, apply_overrides, load_run_config
from .errors import ConfigError, NumericError
from .gradcheck import gradcheck
from .metrics import evaluate
from .model import build_model, count_macs, count_params, describe, level_plan, model_forward
from .optim import Adam, Schedule
from .tensor import Tensor, no_grad
from .training import train

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise ConfigError(message)


def worker_count() -> int:
    raw = os.environ.get("SDFORMER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SDFORMER_THREADS={raw!r} is not an integer") from None


def _map_ordered(fn, items):
    """Apply fn over items, possibly in parallel, preserving order."""
    n = worker_count()
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _load_config(args) -> RunConfig:
    raw = load_run_config(args.config).to_dict() if args.config else RunConfig().to_dict()
    if args.override:
        raw = apply_overrides(raw, args.override)
    return RunConfig.from_dict(raw)


def _parse_size(text: str) -> tuple[int, int]:
    """--size WIDTHxHEIGHT -> (h, w)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must be WIDTHxHEIGHT, got {text!r}") from None
    if h < 1 or w < 1:
        raise ConfigError(f"--size must be positive, got {text!r}")
    return h, w


def main(argv: list[str] | None = None) -> int:
    try:
        return _dispatch(argv if argv is not None else sys.argv[1:])
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 2


def _dispatch(argv: list[str]) -> int:
    parser = _Parser(prog="sdformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--override", action="append", default=[], metavar="K=V",
                       help="override config values, e.g. model.base_channels=12")
        return p

    p = add("describe", "print the architecture table for an input size")
    p.add_argument("--size", default="304x228", help="input WIDTHxHEIGHT")

    p = add("count", "parameter and MAC/FLOP counts as JSON")
    p.add_argument("--size", default="304x228", help="input WIDTHxHEIGHT")

    p = add("gradcheck", "finite-difference checks over all primitives and a tiny model")
    p.add_argument("--size", default="16x16", help="tiny-model input WIDTHxHEIGHT")
    p.add_argument("--tol", type=float, default=1e-6)

    p = add("synth", "materialize a synthetic dataset directory")
    p.add_argument("--out", help="output directory (default: data.dir)")
    p.add_argument("--count", type=int, help="number of samples (default: data.num_samples)")
    p.add_argument("--size", help="scene WIDTHxHEIGHT (default: data.size)")
    p.add_argument("--seed", type=int, help="generator seed (default: data.seed)")

    add("train", "train a model per the run config")

    p = add("eval", "evaluate a checkpoint (or the NN-fill baseline) on a dataset")
    p.add_argument("--checkpoint", help="checkpoint path (default: io.checkpoint)")
    p.add_argument("--baseline", action="store_true", help="evaluate nearest-neighbor fill instead")
    p.add_argument("--per-image", action="store_true", help="average per image instead of pooling pixels")

    p = add("predict", "write the dense prediction PGM for one sample")
    p.add_argument("--checkpoint", help="checkpoint path (default: io.checkpoint)")
    p.add_argument("--sample", required=True, help="sample id from index.txt")
    p.add_argument("--out", help="output PGM path (default: <dir>/<id>_pred.pgm)")

    p = sub.add_parser("heatmap", help="render a depth PGM to a jet-colormap PPM")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min", type=float, default=None, help="depth at the blue end (default: data min)")
    p.add_argument("--max", type=float, default=None, help="depth at the red end (default: data max)")
    p.add_argument("--dilate", type=int, default=1, help="odd square size for dot dilation")

    args = parser.parse_args(argv)
    return _COMMANDS[args.command](args)


def _cmd_describe(args) -> int:
    cfg = _load_config(args)
    h, w = _parse_size(args.size)
    print(describe(cfg.model, h, w))
    level_plan(cfg.model, h, w)  # raises with the offending stage on bad windows
    return 0


def _cmd_count(args) -> int:
    cfg = _load_config(args)
    h, w = _parse_size(args.size)
    params, per_params = count_params(cfg.model)
    macs = count_macs(cfg.model, h, w)
    print(json.dumps({
        "params": params,
        "macs": macs["macs"],
        "flops": macs["flops"],
        "params_by_module": per_params,
        "macs_by_module": macs["per_module"],
    }, indent=2))
    return 0


def _cmd_gradcheck(args) -> int:
    h, w = _parse_size(args.size)
    reports = _gradcheck_suite(h, w, args.tol)
    width = max(len(name) for name, _ in reports)
    failed = []
    for name, rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"{name:<{width}}  {status}  max_rel_err {rep.max_rel_err:.3e}  ({rep.checked} coords)")
        if not rep.passed:
            failed.append(name)
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")
    print(f"all {len(reports)} checks passed at tol {args.tol:g}")
    return 0


def _gradcheck_suite(h: int, w: int, tol: float):
    from . import ops
    from .config import ModelConfig
    from .training import completion_loss

    rng = np.random.default_rng(0)
    t = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)
    reports = []

    def check(name, fn, inputs, coords=24, eps=1e-5):
        # eps trades central-difference truncation against rounding noise;
        # the sum-reduced conv/matmul cases need a larger step because the
        # rounding floor scales with |f|, while layer_norm needs a smaller
        # one because its curvature dominates.
        reports.append((name, gradcheck(fn, inputs, eps=eps, tol=tol,
                                        max_coords_per_input=coords)))

    check("conv2d", lambda x, wt, b: ops.conv2d(x, wt, b, padding=1).square().sum(),
          [t(4, 6, 7), Tensor(rng.normal(size=(5, 4, 3, 3)) * 0.2, requires_grad=True), t(5)],
          eps=1e-4)
    check("conv2d.grouped", lambda x, wt: ops.conv2d(x, wt, stride=2, padding=1, groups=2).square().sum(),
          [t(6, 8, 8), Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.2, requires_grad=True)], eps=1e-4)
    check("conv2d.depthwise", lambda x, wt: ops.conv2d(x, wt, padding=1, groups=6).square().sum(),
          [t(6, 8, 8), Tensor(rng.normal(size=(6, 1, 3, 3)) * 0.2, requires_grad=True)], eps=1e-4)
    check("layer_norm", lambda x, g, b: ops.layer_norm(x, g, b).square().sum(),
          [t(5, 4, 3), t(5), t(5)])
    check("gelu", lambda x: ops.gelu(x).square().sum(), [t(31)])
    check("leaky_relu", lambda x: ops.leaky_relu(x).square().sum(), [t(31)])
    wconst = Tensor(rng.normal(size=(4, 9)))
    check("softmax", lambda x: (ops.softmax(x, axis=-1) * wconst).sum(), [t(4, 9)])
    check("pixel_shuffle.roundtrip",
          lambda x: ops.pixel_shuffle(ops.pixel_unshuffle(x, 2), 2).square().sum(), [t(2, 6, 8)])
    check("window.roundtrip",
          lambda x: ops.window_merge(ops.window_partition(x, 2, 4), 6, 8, 2, 4).square().sum(),
          [t(3, 6, 8)])
    check("pad2d.reflect", lambda x: ops.pad2d(x, (1, 2, 1, 0), mode="reflect").square().sum(),
          [t(2, 5, 6)])
    check("pad2d.zero", lambda x: ops.pad2d(x, (1, 2, 1, 0), mode="zero").square().sum(),
          [t(2, 5, 6)])
    check("crop2d", lambda x: ops.crop2d(x, (1, 0, 2, 1)).square().sum(), [t(2, 5, 6)])
    check("matmul", lambda a, b: (a @ b).square().sum(), [t(4, 3, 5), t(4, 5, 2)])
    gtmap = Tensor(np.abs(rng.normal(size=(1, 6, 6))) + 1)
    maskmap = rng.random((1, 6, 6)) > 0.3
    check("completion_loss", lambda p: completion_loss(p, gtmap, maskmap), [t(1, 6, 6)])

    tiny = ModelConfig(
        base_channels=6, blocks=(1, 1, 1, 1), heads=(1, 2, 4, 8),
        windows=(((4, 4), (2, 2), (8, 8)), ((2, 2), (4, 4), (8, 8)),
                 ((2, 2), (4, 4), (2, 4)), ((2, 2), (1, 1), (2, 1))),
        refinement_blocks=1, expansion=2.0,
    )
    if h % 16 or w % 16:
        raise ConfigError(f"gradcheck size {w}x{h} must be a multiple of 16 for the tiny model windows")
    m = build_model(tiny, seed=0, dtype=np.float64)
    sp = Tensor(rng.uniform(0, 5, (1, h, w)))
    rgbi = Tensor(rng.uniform(0, 1, (3, h, w)))
    params = list(m.weights.values())
    reports.append((
        "tiny_model",
        gradcheck(lambda *_: model_forward(m, sp, rgbi).square().mean(), params,
                  tol=tol, max_coords_per_input=2),
    ))
    return reports


def _cmd_synth(args) -> int:
    cfg = _load_config(args)
    d = cfg.data
    out = Path(args.out or d.dir)
    count = args.count if args.count is not None else d.num_samples
    h, w = _parse_size(args.size) if args.size else d.size
    seed = args.seed if args.seed is not None else d.seed
    if count < 1:
        raise ConfigError(f"synth: count {count} must be >= 1")
    pattern = datakit.SparsePattern(kind=d.pattern, count=d.count, lines=d.lines, seed=seed)

    def make(i):
        rgb, gt = datakit.gen_scene(seed + i, h, w)
        gt = (np.round(gt * datakit.DEPTH_SCALE) / datakit.DEPTH_SCALE).astype(np.float32)
        pat = datakit.SparsePattern(pattern.kind, pattern.count, pattern.lines, pattern.keep, seed=seed + i)
        sp = datakit.sample_sparse(gt, pat)
        return datakit.Sample(rgb=rgb, sparse=sp, gt=gt, id=f"{i:05d}")

    samples = _map_ordered(make, range(count))
    datakit.write_dataset(samples, out)
    print(f"wrote {count} samples ({w}x{h}) to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = datakit.read_dataset(cfg.data.dir)
    hold = cfg.data.holdout
    train_set = dataset[: len(dataset) - hold] if hold else dataset
    val_set = dataset[len(dataset) - hold :] if hold else None
    if not train_set:
        raise ConfigError("train: holdout leaves no training samples")
    h, w = train_set[0].gt.shape[1:]
    level_plan(cfg.model, h, w)  # validate windows before any side effects

    model = build_model(cfg.model, seed=cfg.train.seed)
    optimizer = Adam(dict(model.weights))
    schedule = Schedule(cfg.train.base_lr, cfg.train.factors, cfg.train.epoch_thresholds)
    log_path = Path(cfg.io.log)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    if log_path.exists():
        log_path.unlink()
    result = train(
        model, train_set, schedule,
        epochs=cfg.train.epochs, batch_size=cfg.train.batch_size, seed=cfg.train.seed,
        optimizer=optimizer, log_file=log_path, val_dataset=val_set,
    )
    ck_path = Path(cfg.io.checkpoint)
    ck_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        checkpoint_from_model(result.model, epoch=result.epoch, optim=result.optimizer,
                              rng_state=result.rng_state),
        ck_path,
    )
    last = result.log[-1] if result.log else {}
    print(f"trained {cfg.train.epochs} epochs on {len(train_set)} samples; "
          f"final loss {last.get('loss', float('nan')):.6f}; checkpoint {ck_path}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    dataset = datakit.read_dataset(cfg.data.dir)
    # Mirror the train split: with data.holdout > 0 the last samples are the
    # validation set, and eval scores exactly those.
    if cfg.data.holdout:
        dataset = dataset[len(dataset) - cfg.data.holdout :]
    unit = "mm" if cfg.data.target == "kitti_like" else "m"
    if args.baseline:
        fn = lambda s: nn_fill(s.sparse)
    else:
        ckpt = load_checkpoint(args.checkpoint or cfg.io.checkpoint)
        model = restore_model(ckpt, requires_grad=False)
        def fn(s):
            with no_grad():
                return model_forward(model, Tensor(s.sparse), Tensor(s.rgb)).data
    preds = _map_ordered(fn, dataset)
    lookup = {id(s): p for s, p in zip(dataset, preds)}
    rep = evaluate(lambda s: lookup[id(s)], dataset, unit=unit, per_image=args.per_image)
    blob = json.dumps(rep.to_dict(), indent=2, sort_keys=True)
    report_path = Path(cfg.io.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(blob + "\n")
    print(blob)
    return 0


def _cmd_predict(args) -> int:
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint or cfg.io.checkpoint)
    model = restore_model(ckpt, requires_grad=False)
    sample = datakit.read_sample(cfg.data.dir, args.sample)
    with no_grad():
        pred = model_forward(model, Tensor(sample.sparse), Tensor(sample.rgb)).data
    pred = np.clip(pred, 0.0, 65535.0 / datakit.DEPTH_SCALE)
    out = Path(args.out) if args.out else Path(cfg.data.dir) / f"{args.sample}_pred.pgm"
    out.parent.mkdir(parents=True, exist_ok=True)
    datakit.write_pgm16(out, pred)
    print(f"wrote {out}")
    return 0


def _cmd_heatmap(args) -> int:
    depth = datakit.read_pgm16(args.input)
    valid = depth[depth > 0]
    vmin = args.min if args.min is not None else (float(valid.min()) if valid.size else 0.0)
    vmax = args.max if args.max is not None else (float(valid.max()) if valid.size else 1.0)
    if vmin == vmax:
        vmax = vmin + 1.0
    img = hm.render_heatmap(depth, vmin, vmax, dilate=args.dilate)
    datakit.write_ppm(args.output, img)
    print(f"wrote {args.output} (range {vmin:g}..{vmax:g} m, dilate {args.dilate})")
    return 0


_COMMANDS = {
    "describe": _cmd_describe,
    "count": _cmd_count,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "heatmap": _cmd_heatmap,
}
