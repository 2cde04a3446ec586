"""Bit-exact binary checkpoints.

Layout: magic ``SDCK`` | version u32 LE | JSON length u32 LE | canonical JSON
(config, epoch, optimizer scalars, RNG state) | tensor table to EOF. Each
table entry: name length u32 LE, UTF-8 name, rank u32 LE, extents u32 LE each,
raw little-endian float32 data. Canonical JSON (sorted keys, no spaces) plus
fixed tensor order makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import ConfigError
from .model import Model, iter_param_shapes
from .tensor import Tensor

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "checkpoint_from_model", "restore_model"]

MAGIC = b"SDCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: "OrderedDict[str, np.ndarray]"
    epoch: int = 0
    optim: dict | None = None  # {"t", "beta1", "beta2", "eps", "m": {...}, "v": {...}}
    rng_state: dict | None = None
    version: int = VERSION


def checkpoint_from_model(model: Model, epoch: int = 0, optim=None, rng_state: dict | None = None) -> Checkpoint:
    weights = OrderedDict((k, np.asarray(t.data, dtype=np.float32)) for k, t in model.weights.items())
    state = optim.state_dict() if hasattr(optim, "state_dict") else optim
    return Checkpoint(model.config, weights, epoch=epoch, optim=state, rng_state=rng_state)


def restore_model(ckpt: Checkpoint, requires_grad: bool = True) -> Model:
    weights: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, arr in ckpt.weights.items():
        weights[name] = Tensor(arr.copy(), requires_grad=requires_grad)
    return Model(ckpt.config, weights)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    head = {
        "config": ckpt.config.to_dict(),
        "epoch": int(ckpt.epoch),
        "rng": ckpt.rng_state,
        "optim": None,
    }
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict(ckpt.weights)
    if ckpt.optim is not None:
        head["optim"] = {
            "t": int(ckpt.optim["t"]),
            "beta1": float(ckpt.optim["beta1"]),
            "beta2": float(ckpt.optim["beta2"]),
            "eps": float(ckpt.optim["eps"]),
        }
        for name in ckpt.weights:
            tensors[f"adam.m.{name}"] = np.asarray(ckpt.optim["m"][name], dtype=np.float32)
            tensors[f"adam.v.{name}"] = np.asarray(ckpt.optim["v"][name], dtype=np.float32)

    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", ckpt.version)
    out += struct.pack("<I", len(blob))
    out += blob
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(raw, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}, not an SDCK checkpoint")
    version = r.u32()
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    blob = r.take(r.u32())
    try:
        head = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: corrupt JSON header: {e}") from e
    config = ModelConfig.from_dict(head["config"])

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while not r.done():
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise ConfigError(f"{path}: tensor {name!r} has implausible rank {rank}")
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = r.take(4 * count)
        if name in tensors:
            raise ConfigError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()

    weights: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in iter_param_shapes(config):
        if name not in tensors:
            raise ConfigError(f"{path}: missing weight {name!r} required by the embedded config")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise ConfigError(f"{path}: weight {name!r} has shape {arr.shape}, config requires {shape}")
        weights[name] = arr

    optim = None
    if head.get("optim") is not None:
        optim = dict(head["optim"], m={}, v={})
        for name in weights:
            for kind in ("m", "v"):
                key = f"adam.{kind}.{name}"
                if key not in tensors:
                    raise ConfigError(f"{path}: missing optimizer tensor {key!r}")
                arr = tensors.pop(key)
                if arr.shape != weights[name].shape:
                    raise ConfigError(f"{path}: optimizer tensor {key!r} shape mismatch")
                optim[kind][name] = arr
    if tensors:
        extra = ", ".join(list(tensors)[:3])
        raise ConfigError(f"{path}: unexpected tensors in table: {extra}")

    return Checkpoint(
        config=config,
        weights=weights,
        epoch=int(head.get("epoch", 0)),
        optim=optim,
        rng_state=head.get("rng"),
        version=version,
    )


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ConfigError(
                f"{self.path}: truncated checkpoint (wanted {n} bytes at offset {self.off}, "
                f"file has {len(self.buf)})"
            )
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> bool:
        return self.off == len(self.buf)
