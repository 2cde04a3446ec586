"""Adam optimizer and the stepped learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor

__all__ = ["Adam", "Schedule", "lr_at_epoch"]


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant decay: lr = base_lr * factor of the largest
    threshold <= epoch; base_lr alone before the first threshold."""

    base_lr: float
    factors: tuple[float, ...]
    epoch_thresholds: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr {self.base_lr} must be positive")
        if len(self.factors) != len(self.epoch_thresholds):
            raise ConfigError("factors and epoch_thresholds differ in length")
        if any(f <= 0 for f in self.factors):
            raise ConfigError(f"factors must be positive, got {self.factors}")
        if any(a >= b for a, b in zip(self.epoch_thresholds, self.epoch_thresholds[1:])):
            raise ConfigError(f"epoch_thresholds must strictly increase, got {self.epoch_thresholds}")


def lr_at_epoch(schedule: Schedule, epoch: int) -> float:
    if epoch < 0:
        raise ConfigError(f"epoch {epoch} negative")
    lr = schedule.base_lr
    for factor, threshold in zip(schedule.factors, schedule.epoch_thresholds):
        if epoch >= threshold:
            lr = schedule.base_lr * factor
    return lr


class Adam:
    """Standard bias-corrected Adam; no weight decay, no clipping.

    State tensors are float32 to match training precision; `state_dict` and
    `load_state_dict` expose them for checkpointing.
    """

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError(f"invalid Adam hyperparameters: beta1={beta1}, beta2={beta2}, eps={eps}")
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float) -> None:
        """Apply one update from the gradients currently stored on params."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            dt = p.data.dtype.type
            m = self.m[name]
            v = self.v[name]
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(self.eps))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": dict(self.m),
            "v": dict(self.v),
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        for name in self.params:
            if name not in state["m"] or name not in state["v"]:
                raise ConfigError(f"optimizer state missing moments for {name!r}")
            if state["m"][name].shape != self.params[name].data.shape:
                raise ConfigError(f"optimizer moment shape mismatch for {name!r}")
            self.m[name] = np.asarray(state["m"][name], dtype=self.params[name].data.dtype)
            self.v[name] = np.asarray(state["v"][name], dtype=self.params[name].data.dtype)
