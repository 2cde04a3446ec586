"""Synthetic scenes, sparse sampling, preprocessing and on-disk formats.

Depth maps are stored as 16-bit binary PGM (P5, maxval 65535, big-endian),
meters = value / 256, 0 = invalid. RGB is binary PPM (P6, maxval 255).
A dataset directory holds `index.txt` plus `<id>_rgb.ppm`, `<id>_sparse.pgm`
and `<id>_gt.pgm` per sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "Sample",
    "SparsePattern",
    "gen_scene",
    "sample_sparse",
    "preprocess",
    "write_pgm16",
    "read_pgm16",
    "write_ppm",
    "read_ppm",
    "write_sample",
    "read_sample",
    "write_dataset",
    "read_dataset",
    "make_synthetic_dataset",
]

DEPTH_SCALE = 256.0  # stored value = meters * 256


@dataclass
class Sample:
    """One depth-completion instance; all maps channel-first float32."""

    rgb: np.ndarray  # (3, H, W) in [0, 1]
    sparse: np.ndarray  # (1, H, W) meters, 0 = invalid
    gt: np.ndarray  # (1, H, W) meters, 0 = invalid
    id: str = "sample"

    def validate(self) -> None:
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise ConfigError(f"sample {self.id}: rgb must be 3xHxW, got {self.rgb.shape}")
        sh = self.rgb.shape[1:]
        for name, m in (("sparse", self.sparse), ("gt", self.gt)):
            if m.shape != (1, *sh):
                raise ConfigError(
                    f"sample {self.id}: {name} shape {m.shape} does not match rgb {self.rgb.shape}"
                )
            if not np.isfinite(m).all():
                raise ConfigError(f"sample {self.id}: {name} has non-finite values")
            if (m < 0).any():
                raise ConfigError(f"sample {self.id}: {name} has negative depths")
        if not np.isfinite(self.rgb).all():
            raise ConfigError(f"sample {self.id}: rgb has non-finite values")
        sv = self.sparse > 0
        if not np.array_equal(self.sparse[sv], self.gt[sv]) or not (self.gt[sv] > 0).all():
            raise ConfigError(
                f"sample {self.id}: sparse map is not a subset of gt (sparse must copy gt)"
            )


@dataclass(frozen=True)
class SparsePattern:
    kind: str = "uniform_random"  # or "scanlines"
    count: int = 500
    lines: int = 64
    keep: float = 0.25  # within-line survival rate for scanlines
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform_random", "scanlines"):
            raise ConfigError(f"pattern kind {self.kind!r} unknown")
        if self.count < 0 or self.lines < 1 or not 0 < self.keep <= 1:
            raise ConfigError(
                f"pattern parameters invalid: count={self.count}, lines={self.lines}, keep={self.keep}"
            )


# -- synthetic scenes ----------------------------------------------------------------


def gen_scene(seed: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Render a random orthographic scene: (rgb 3xHxW in [0,1], depth 1xHxW in [1,10] m).

    A slanted background plane plus 3..8 boxes/spheres/slanted plane patches,
    composited by z-buffer. RGB is per-object albedo times Lambertian shading
    of the depth field's normals, so depth edges coincide with rgb edges.
    """
    if h < 16 or w < 16:
        raise ConfigError(f"gen_scene: size {h}x{w} below the 16-pixel minimum")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")

    depth = (
        rng.uniform(6.0, 9.0)
        + rng.uniform(-1.0, 1.0) * (xx / w)
        + rng.uniform(-1.0, 1.0) * (yy / h)
    )
    albedo = np.empty((3, h, w))
    albedo[:] = rng.uniform(0.25, 0.95, size=3)[:, None, None]

    n_objects = int(rng.integers(3, 9))
    for _ in range(n_objects):
        kind = rng.choice(("box", "sphere", "plane"))
        color = rng.uniform(0.15, 1.0, size=3)
        z0 = rng.uniform(1.5, 7.5)
        if kind == "sphere":
            r = rng.uniform(0.12, 0.3) * min(h, w)
            cy = rng.uniform(0.2, 0.8) * h
            cx = rng.uniform(0.2, 0.8) * w
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            inside = d2 <= r * r
            bulge = rng.uniform(0.5, 1.5)
            z = z0 - bulge * np.sqrt(np.maximum(r * r - d2, 0.0)) / r
        else:
            bh = rng.uniform(0.15, 0.5) * h
            bw = rng.uniform(0.15, 0.5) * w
            cy = rng.uniform(0.1, 0.9) * h
            cx = rng.uniform(0.1, 0.9) * w
            inside = (np.abs(yy - cy) <= bh / 2) & (np.abs(xx - cx) <= bw / 2)
            if kind == "plane":
                sx, sy = rng.uniform(-2.0, 2.0, size=2)
            else:
                sx, sy = rng.uniform(-0.2, 0.2, size=2)
            z = z0 + sx * (xx - cx) / w + sy * (yy - cy) / h
        closer = inside & (z < depth)
        depth = np.where(closer, z, depth)
        albedo = np.where(closer[None], color[:, None, None], albedo)

    depth = np.clip(depth, 1.0, 10.0)

    # Lambertian shading from the composited depth field
    gy, gx = np.gradient(depth)
    nz = 1.0 / np.sqrt(gx * gx + gy * gy + 1.0)
    light = np.array([0.35, 0.25, 0.9])
    light /= np.linalg.norm(light)
    shade = np.clip((-gx * light[0] - gy * light[1] + light[2]) * nz, 0.15, 1.0)
    rgb = np.clip(albedo * shade[None], 0.0, 1.0)

    return rgb.astype(np.float32), depth[None].astype(np.float32)


def sample_sparse(gt: np.ndarray, pattern: SparsePattern) -> np.ndarray:
    """Copy selected gt pixels into an otherwise-zero sparse map."""
    if gt.ndim != 3 or gt.shape[0] != 1:
        raise ConfigError(f"sample_sparse: gt must be 1xHxW, got {gt.shape}")
    rng = np.random.default_rng(pattern.seed)
    h, w = gt.shape[1:]
    sparse = np.zeros_like(gt)
    if pattern.kind == "uniform_random":
        valid = np.flatnonzero(gt[0] > 0)
        if valid.size < pattern.count:
            raise ConfigError(
                f"sample_sparse: requested {pattern.count} points but only "
                f"{valid.size} valid gt pixels are available"
            )
        if pattern.count > 0:
            chosen = rng.choice(valid, size=pattern.count, replace=False)
            sparse[0].flat[chosen] = gt[0].flat[chosen]
        return sparse
    # scanlines: evenly spaced jittered rows, random within-line dropout
    step = h / pattern.lines
    rows = np.clip(
        np.floor((np.arange(pattern.lines) + 0.5) * step + rng.uniform(-step / 4, step / 4, pattern.lines)),
        0,
        h - 1,
    ).astype(int)
    for r in np.unique(rows):
        keep = rng.random(w) < pattern.keep
        sel = keep & (gt[0, r] > 0)
        sparse[0, r, sel] = gt[0, r, sel]
    return sparse


# -- preprocessing ----------------------------------------------------------------


def preprocess(sample: Sample, target: str) -> Sample:
    """Crop/pad conventions: nyu_like = half downsample then center crop
    304x228 (WxH); kitti_like = drop top 20 rows then center crop 1216x320."""
    sample.validate()
    if target == "none":
        return sample
    if target == "nyu_like":
        rgb = _half_bilinear(sample.rgb)
        gt = _half_depth(sample.gt)
        sparse = _half_depth(sample.sparse)
        sparse = _resubset(sparse, gt)
        rgb, sparse, gt = _center_crop(rgb, sparse, gt, 228, 304, sample.id)
    elif target == "kitti_like":
        if sample.rgb.shape[1] <= 20:
            raise ConfigError(f"sample {sample.id}: too short to drop the top 20 rows")
        rgb = sample.rgb[:, 20:]
        sparse = sample.sparse[:, 20:]
        gt = sample.gt[:, 20:]
        rgb, sparse, gt = _center_crop(rgb, sparse, gt, 320, 1216, sample.id)
    else:
        raise ConfigError(f"preprocess target {target!r} unknown")
    out = Sample(rgb=rgb, sparse=sparse, gt=gt, id=sample.id)
    out.validate()
    return out


def _half_bilinear(a: np.ndarray) -> np.ndarray:
    c, h, w = a.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    v = a[:, :h2, :w2].reshape(c, h2 // 2, 2, w2 // 2, 2)
    return v.mean(axis=(2, 4)).astype(a.dtype)


def _half_depth(a: np.ndarray) -> np.ndarray:
    """2x depth downsample keeping measured values: first valid pixel of each
    2x2 block in scan order (averaging would invent depths at edges)."""
    c, h, w = a.shape
    h2, w2 = h // 2 * 2, w // 2 * 2
    v = a[:, :h2, :w2].reshape(c, h2 // 2, 2, w2 // 2, 2).transpose(0, 1, 3, 2, 4)
    flat = v.reshape(c, h2 // 2, w2 // 2, 4)
    first = np.argmax(flat > 0, axis=-1)
    out = np.take_along_axis(flat, first[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out).astype(a.dtype)


def _resubset(sparse: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Zero sparse pixels that no longer match gt after resampling, keeping
    the sparse-subset-of-gt invariant."""
    ok = (sparse > 0) & (sparse == gt)
    return np.where(ok, gt, 0).astype(sparse.dtype)


def _center_crop(rgb, sparse, gt, th: int, tw: int, sid: str):
    h, w = rgb.shape[1:]
    if h < th or w < tw:
        raise ConfigError(f"sample {sid}: size {h}x{w} smaller than crop {th}x{tw}")
    y0 = (h - th) // 2
    x0 = (w - tw) // 2
    sl = (slice(None), slice(y0, y0 + th), slice(x0, x0 + tw))
    return (np.ascontiguousarray(m[sl]) for m in (rgb, sparse, gt))


# -- PGM / PPM ----------------------------------------------------------------


def write_pgm16(path: str | Path, depth_m: np.ndarray) -> None:
    """16-bit big-endian binary PGM, value = round(meters * 256), 0 invalid."""
    d = depth_m[0] if depth_m.ndim == 3 else depth_m
    vals = np.round(np.asarray(d, dtype=np.float64) * DEPTH_SCALE)
    if (vals < 0).any() or (vals > 65535).any():
        raise ConfigError(f"{path}: depth out of range for 16-bit storage (max 255.99 m)")
    h, w = d.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + vals.astype(">u2").tobytes())


def read_pgm16(path: str | Path) -> np.ndarray:
    """Read a depth PGM back to (1, H, W) float32 meters."""
    data = _read_bytes(path)
    magic, w, h, maxval, off = _parse_pnm_header(data, path)
    if magic != b"P5":
        raise ConfigError(f"{path}: expected P5 depth PGM, got {magic.decode('latin1')}")
    if maxval != 65535:
        raise ConfigError(f"{path}: depth PGM maxval must be 65535, got {maxval}")
    need = w * h * 2
    if len(data) - off != need:
        raise ConfigError(f"{path}: payload is {len(data) - off} bytes, expected {need}")
    vals = np.frombuffer(data, dtype=">u2", count=w * h, offset=off).reshape(h, w)
    return (vals.astype(np.float32) / DEPTH_SCALE)[None]


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """8-bit binary PPM from a (3, H, W) [0,1] map."""
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ConfigError(f"{path}: rgb must be 3xHxW, got {rgb.shape}")
    u8 = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    h, w = rgb.shape[1:]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + u8.transpose(1, 2, 0).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = _read_bytes(path)
    magic, w, h, maxval, off = _parse_pnm_header(data, path)
    if magic != b"P6":
        raise ConfigError(f"{path}: expected P6 PPM, got {magic.decode('latin1')}")
    if maxval != 255:
        raise ConfigError(f"{path}: PPM maxval must be 255, got {maxval}")
    need = w * h * 3
    if len(data) - off != need:
        raise ConfigError(f"{path}: payload is {len(data) - off} bytes, expected {need}")
    u8 = np.frombuffer(data, dtype=np.uint8, count=need, offset=off).reshape(h, w, 3)
    return (u8.transpose(2, 0, 1).astype(np.float32) / 255.0)


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e


def _parse_pnm_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse 'magic w h maxval' with whitespace and # comments; return offset
    of the first payload byte."""
    pos = 0
    fields: list[bytes] = []
    if len(data) < 2:
        raise ConfigError(f"{path}: empty or truncated PNM file")
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ConfigError(f"{path}: truncated PNM header")
        fields.append(data[start:pos])
    if pos >= len(data):
        raise ConfigError(f"{path}: header not followed by payload")
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as e:
        raise ConfigError(f"{path}: malformed PNM header fields {fields[1:]}") from e
    if w < 1 or h < 1:
        raise ConfigError(f"{path}: invalid PNM size {w}x{h}")
    return fields[0], w, h, maxval, pos


# -- dataset directory ----------------------------------------------------------------


def write_sample(sample: Sample, dir: str | Path) -> None:
    sample.validate()
    d = Path(dir)
    d.mkdir(parents=True, exist_ok=True)
    write_ppm(d / f"{sample.id}_rgb.ppm", sample.rgb)
    write_pgm16(d / f"{sample.id}_sparse.pgm", sample.sparse)
    write_pgm16(d / f"{sample.id}_gt.pgm", sample.gt)


def read_sample(dir: str | Path, sample_id: str) -> Sample:
    d = Path(dir)
    s = Sample(
        rgb=read_ppm(d / f"{sample_id}_rgb.ppm"),
        sparse=read_pgm16(d / f"{sample_id}_sparse.pgm"),
        gt=read_pgm16(d / f"{sample_id}_gt.pgm"),
        id=sample_id,
    )
    s.validate()
    return s


def write_dataset(samples: list[Sample], dir: str | Path) -> None:
    d = Path(dir)
    d.mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_sample(s, d)
    (d / "index.txt").write_text("".join(s.id + "\n" for s in samples))


def read_dataset(dir: str | Path) -> list[Sample]:
    d = Path(dir)
    index = d / "index.txt"
    if not index.exists():
        raise ConfigError(f"{dir}: no index.txt; not a dataset directory")
    ids = [line.strip() for line in index.read_text().splitlines() if line.strip()]
    if not ids:
        raise ConfigError(f"{dir}: index.txt lists no samples")
    return [read_sample(d, sid) for sid in ids]


def make_synthetic_dataset(
    count: int, h: int, w: int, pattern: SparsePattern, seed: int = 0
) -> list[Sample]:
    """Generate `count` scenes with quantization-exact depths, so written and
    in-memory datasets are identical."""
    samples = []
    for i in range(count):
        rgb, gt = gen_scene(seed + i, h, w)
        # snap to the on-disk quantization grid up front
        gt = (np.round(gt * DEPTH_SCALE) / DEPTH_SCALE).astype(np.float32)
        sp = sample_sparse(gt, SparsePattern(pattern.kind, pattern.count, pattern.lines, pattern.keep, seed=pattern.seed + i))
        samples.append(Sample(rgb=rgb, sparse=sp, gt=gt, id=f"{i:05d}"))
    return samples
