"""Configuration dataclasses and strict JSON loading.

The JSON schema is fixed: unknown keys are rejected at every level so a
misspelled window entry fails loudly instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ConfigError

__all__ = [
    "StageSpec",
    "ModelConfig",
    "TrainConfig",
    "DataConfig",
    "IOConfig",
    "RunConfig",
    "nyu_model_config",
    "kitti_model_config",
    "load_run_config",
    "apply_overrides",
]

ATTENTION_VARIANTS = ("dwsa", "wsa")
FFN_VARIANTS = ("gffn", "mlp")

Window = tuple[int, int]
WindowTriple = tuple[Window, Window, Window]


@dataclass(frozen=True)
class StageSpec:
    """Per-stage transformer hyperparameters."""

    block_count: int
    heads: int
    windows: WindowTriple

    def validate(self, stage: int) -> None:
        if self.block_count < 0:
            raise ConfigError(f"stage {stage}: block count {self.block_count} negative")
        if self.heads < 1:
            raise ConfigError(f"stage {stage}: heads {self.heads} must be >= 1")
        if len(self.windows) != 3:
            raise ConfigError(f"stage {stage}: expected 3 window entries, got {len(self.windows)}")
        for i, (dh, dw) in enumerate(self.windows):
            if dh < 1 or dw < 1:
                raise ConfigError(f"stage {stage}: window {i + 1} = [{dh},{dw}] must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 24
    blocks: tuple[int, int, int, int] = (2, 4, 6, 8)
    heads: tuple[int, int, int, int] = (1, 2, 4, 8)
    windows: tuple[WindowTriple, WindowTriple, WindowTriple, WindowTriple] = (
        ((4, 4), (6, 8), (12, 16)),
        ((6, 4), (6, 19), (19, 8)),
        ((3, 4), (3, 19), (19, 4)),
        ((29, 2), (29, 19), (29, 38)),
    )
    refinement_blocks: int = 2
    expansion: float = 2.88
    attention_variant: str = "dwsa"
    ffn_variant: str = "gffn"

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", _int_tuple(self.blocks, 4, "blocks"))
        object.__setattr__(self, "heads", _int_tuple(self.heads, 4, "heads"))
        object.__setattr__(self, "windows", _window_grid(self.windows))
        self.validate()

    def stage(self, i: int) -> StageSpec:
        """StageSpec for stage i in 1..4."""
        return StageSpec(self.blocks[i - 1], self.heads[i - 1], self.windows[i - 1])

    def channels_at_level(self, level: int) -> int:
        """Encoder channel count C·2^(level-1) for level in 1..4."""
        return self.base_channels * (1 << (level - 1))

    def hidden_width(self, channels: int) -> int:
        """GFFN/MLP hidden width h = floor(expansion * channels)."""
        return int(self.expansion * channels)

    def refinement_heads(self) -> int:
        """Heads at the 3C refinement stage, preserving stage-1 per-head dim."""
        return 3 * self.heads[0]

    def validate(self) -> None:
        c = self.base_channels
        if c < 2 or c % 2 != 0:
            raise ConfigError(f"base_channels {c} must be a positive even number (C/2 + C/2 input split)")
        if self.refinement_blocks < 0:
            raise ConfigError(f"refinement_blocks {self.refinement_blocks} negative")
        if self.expansion <= 0:
            raise ConfigError(f"expansion {self.expansion} must be positive")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(
                f"attention_variant {self.attention_variant!r} not in {ATTENTION_VARIANTS}"
            )
        if self.ffn_variant not in FFN_VARIANTS:
            raise ConfigError(f"ffn_variant {self.ffn_variant!r} not in {FFN_VARIANTS}")
        for s in range(1, 5):
            spec = self.stage(s)
            spec.validate(s)
            # every channel width this stage's spec attends at must split into
            # 3 branches of whole channels, each divisible by the head count
            for level_channels, where in self._attention_widths(s):
                if level_channels % 3 != 0:
                    raise ConfigError(
                        f"stage {s} ({where}): channels {level_channels} not divisible by 3 branches"
                    )
                branch = level_channels // 3
                if branch % spec.heads != 0:
                    raise ConfigError(
                        f"stage {s} ({where}): branch channels {branch} not divisible by heads {spec.heads}"
                    )

    def _attention_widths(self, stage: int):
        """(channels, description) pairs where the given stage's spec runs."""
        c = self.base_channels
        enc = c * (1 << (stage - 1))
        out = [(enc, "encoder" if stage < 4 else "latent")]
        if stage in (2, 3):
            out.append((enc, "decoder"))
        if stage == 1:
            out.append((2 * c, "decoder level 1"))
            if self.refinement_blocks > 0:
                heads_r = self.refinement_heads()
                if (3 * c) % 3 != 0 or c % self.heads[0] != 0:
                    raise ConfigError(
                        f"refinement: channels {3 * c} with heads {heads_r} violate branch split"
                    )
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        d["heads"] = list(self.heads)
        d["windows"] = [[list(w) for w in triple] for triple in self.windows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = _check_keys(d, cls.__dataclass_fields__, "model")
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 3e-4
    factors: tuple[float, ...] = (1.0, 0.2, 0.04, 0.008)
    epoch_thresholds: tuple[int, ...] = (10, 15, 20, 25)
    epochs: int = 25
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))
        object.__setattr__(
            self, "epoch_thresholds", tuple(int(e) for e in self.epoch_thresholds)
        )
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr {self.base_lr} must be positive")
        if len(self.factors) != len(self.epoch_thresholds):
            raise ConfigError(
                f"factors ({len(self.factors)}) and epoch_thresholds "
                f"({len(self.epoch_thresholds)}) differ in length"
            )
        if any(f <= 0 for f in self.factors):
            raise ConfigError(f"factors must all be positive, got {self.factors}")
        if any(b >= a for a, b in zip(self.epoch_thresholds[1:], self.epoch_thresholds)):
            raise ConfigError(f"epoch_thresholds must strictly increase, got {self.epoch_thresholds}")
        if self.epochs < 0:
            raise ConfigError(f"epochs {self.epochs} negative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size {self.batch_size} must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**_check_keys(d, cls.__dataclass_fields__, "train"))


@dataclass(frozen=True)
class DataConfig:
    dir: str = "data/synth"
    pattern: str = "uniform_random"
    count: int = 500
    lines: int = 64
    target: str = "none"
    size: tuple[int, int] = (64, 64)
    num_samples: int = 64
    holdout: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "size", _int_tuple(self.size, 2, "size"))
        if self.pattern not in ("uniform_random", "scanlines"):
            raise ConfigError(f"pattern {self.pattern!r} not in ('uniform_random', 'scanlines')")
        if self.target not in ("none", "nyu_like", "kitti_like"):
            raise ConfigError(f"target {self.target!r} not in ('none', 'nyu_like', 'kitti_like')")
        if self.count < 0 or self.lines < 1:
            raise ConfigError(f"pattern parameters invalid: count={self.count}, lines={self.lines}")
        if self.num_samples < 1 or self.holdout < 0 or self.holdout >= self.num_samples:
            raise ConfigError(
                f"num_samples={self.num_samples}, holdout={self.holdout} invalid"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return cls(**_check_keys(d, cls.__dataclass_fields__, "data"))


@dataclass(frozen=True)
class IOConfig:
    checkpoint: str = "run/model.ckpt"
    report: str = "run/report.json"
    log: str = "run/train_log.jsonl"

    @classmethod
    def from_dict(cls, d: dict) -> "IOConfig":
        return cls(**_check_keys(d, cls.__dataclass_fields__, "io"))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IOConfig = field(default_factory=IOConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = _check_keys(d, cls.__dataclass_fields__, "run config")
        return cls(
            model=ModelConfig.from_dict(d.get("model", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            data=DataConfig.from_dict(d.get("data", {})),
            io=IOConfig.from_dict(d.get("io", {})),
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": asdict(self.train),
            "data": asdict(self.data),
            "io": asdict(self.io),
        }


def nyu_model_config() -> ModelConfig:
    """The indoor full configuration."""
    return ModelConfig()


def kitti_model_config() -> ModelConfig:
    """The outdoor full configuration."""
    return ModelConfig(
        base_channels=12,
        blocks=(2, 2, 6, 8),
        heads=(1, 2, 4, 8),
        windows=(
            ((4, 4), (8, 8), (16, 16)),
            ((4, 4), (8, 8), (16, 16)),
            ((4, 4), (8, 8), (8, 16)),
            ((4, 4), (8, 8), (4, 19)),
        ),
        refinement_blocks=2,
        expansion=2.08,
    )


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and fully validate a JSON run config; raises ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object, got {type(raw).__name__}")
    return RunConfig.from_dict(raw)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `--override section.key=value` pairs onto a raw config dict.

    Values parse as JSON when possible (numbers, lists, booleans), else as a
    bare string. Paths must address existing schema positions; dotted path
    segments beyond the section are not checked here since RunConfig
    validation rejects unknown keys afterwards.
    """
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must be key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if len(parts) < 2:
            raise ConfigError(f"override key {key!r} must be section.field")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} descends into a non-object")
        node[parts[-1]] = parsed
    return out


def _check_keys(d: dict, fields, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} section must be a JSON object, got {type(d).__name__}")
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")
    return dict(d)


def _int_tuple(v, n: int, name: str) -> tuple:
    try:
        t = tuple(int(x) for x in v)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be a sequence of {n} integers, got {v!r}") from e
    if len(t) != n:
        raise ConfigError(f"{name} must have {n} entries, got {len(t)}")
    return t


def _window_grid(w) -> tuple:
    try:
        grid = tuple(
            tuple((int(dh), int(dw)) for dh, dw in triple) for triple in w
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"windows must be a 4x3 grid of [dh, dw] pairs, got {w!r}") from e
    if len(grid) != 4 or any(len(t) != 3 for t in grid):
        raise ConfigError("windows must have 4 stages of 3 [dh, dw] pairs")
    return grid
