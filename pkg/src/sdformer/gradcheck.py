"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Tensor, no_grad

__all__ = ["GradCheckReport", "gradcheck"]


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep.

    ``max_rel_err`` is max over all probed coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """

    passed: bool
    max_rel_err: float
    tol: float
    checked: int
    worst: tuple[int, tuple[int, ...]] | None = None
    per_input: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        loc = "" if self.worst is None else f" worst at input {self.worst[0]} index {self.worst[1]}"
        return (
            f"gradcheck {status}: max_rel_err={self.max_rel_err:.3e} "
            f"tol={self.tol:.1e} over {self.checked} coordinates{loc}"
        )


def gradcheck(
    fn,
    inputs: list[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_input: int = 64,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare reverse-mode grads of scalar ``fn(*inputs)`` to central differences.

    Inputs are perturbed in float64. For tensors larger than
    ``max_coords_per_input`` a deterministic uniform subsample of coordinates
    is probed. Only inputs with ``requires_grad`` are checked.
    """
    if eps <= 0 or tol <= 0:
        raise ConfigError(f"gradcheck eps and tol must be positive, got eps={eps}, tol={tol}")
    if not any(t.requires_grad for t in inputs):
        raise ConfigError("gradcheck: no input has requires_grad=True")

    for t in inputs:
        t.data = t.data.astype(np.float64)
        t.grad = None

    out = fn(*inputs)
    if out.data.ndim != 0 and out.data.size != 1:
        raise ConfigError(f"gradcheck: fn must return a scalar, got shape {out.data.shape}")
    if not np.isfinite(out.data):
        raise NumericError("gradcheck: fn returned a non-finite value")
    out.backward()

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    checked = 0
    worst = None
    per_input: list[float] = []

    for i, t in enumerate(inputs):
        if not t.requires_grad:
            per_input.append(0.0)
            continue
        if t.grad is None:
            raise NumericError(f"gradcheck: input {i} received no gradient")
        analytic = t.grad
        n = t.data.size
        if n <= max_coords_per_input:
            flat_ids = np.arange(n)
        else:
            flat_ids = rng.choice(n, size=max_coords_per_input, replace=False)
        input_max = 0.0
        for fid in flat_ids:
            idx = np.unravel_index(int(fid), t.data.shape)
            orig = t.data[idx]
            with no_grad():
                t.data[idx] = orig + eps
                f_plus = fn(*inputs).data.item()
                t.data[idx] = orig - eps
                f_minus = fn(*inputs).data.item()
                t.data[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            checked += 1
            input_max = max(input_max, rel)
            if rel > max_rel:
                max_rel = rel
                worst = (i, tuple(int(v) for v in idx))
        per_input.append(input_max)

    return GradCheckReport(
        passed=max_rel <= tol,
        max_rel_err=max_rel,
        tol=tol,
        checked=checked,
        worst=worst,
        per_input=per_input,
    )
