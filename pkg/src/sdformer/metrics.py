"""The six evaluation metrics and dataset-level aggregation.

RMSE, MAE (m, or mm for KITTI-style reports), iRMSE, iMAE (1/km), REL and
the three delta thresholds (percent of valid pixels), computed over valid
(gt > 0) pixels only. Dataset aggregation pools pixels across samples before
applying the formulas; per-image averaging is available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, no_grad

__all__ = ["MetricsReport", "compute_metrics", "evaluate", "CLAMP_FLOOR_M"]

CLAMP_FLOOR_M = 1e-3  # floor for inverse metrics at non-positive predictions
DELTAS = (1.25, 1.25**2, 1.25**3)


@dataclass
class MetricsReport:
    rmse: float  # m (or mm when unit == "mm")
    mae: float
    irmse: float  # 1/km
    imae: float  # 1/km
    rel: float
    d1: float  # percent
    d2: float
    d3: float
    pixels: int
    samples: int
    warnings: int  # count of non-positive predictions at valid pixels
    unit: str = "m"

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mae": self.mae,
            "irmse": self.irmse,
            "imae": self.imae,
            "rel": self.rel,
            "d1": self.d1,
            "d2": self.d2,
            "d3": self.d3,
            "pixels": self.pixels,
            "samples": self.samples,
            "warnings": self.warnings,
        }

    def __str__(self) -> str:
        return (
            f"rmse {self.rmse:.4f} {self.unit}  mae {self.mae:.4f} {self.unit}  "
            f"irmse {self.irmse:.3f} 1/km  imae {self.imae:.3f} 1/km  rel {self.rel:.4f}  "
            f"d1 {self.d1:.2f}%  d2 {self.d2:.2f}%  d3 {self.d3:.2f}%  "
            f"({self.pixels} px, {self.samples} samples, {self.warnings} warnings)"
        )


class _Accumulator:
    __slots__ = ("se", "ae", "ise", "iae", "rel", "d", "pixels", "samples", "warnings")

    def __init__(self):
        self.se = 0.0
        self.ae = 0.0
        self.ise = 0.0
        self.iae = 0.0
        self.rel = 0.0
        self.d = [0, 0, 0]
        self.pixels = 0
        self.samples = 0
        self.warnings = 0

    def add(self, pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None) -> None:
        pred = np.asarray(pred, dtype=np.float64).reshape(-1)
        gt = np.asarray(gt, dtype=np.float64).reshape(-1)
        if pred.shape != gt.shape:
            raise ConfigError(f"compute_metrics: pred {pred.shape} and gt {gt.shape} differ")
        m = (gt > 0) if mask is None else np.asarray(mask).reshape(-1).astype(bool)
        n = int(np.count_nonzero(m))
        if n == 0:
            raise ConfigError("compute_metrics: empty validity mask")
        p = pred[m]
        d = gt[m]
        bad = p <= 0
        self.warnings += int(bad.sum())

        err = p - d
        self.se += float(np.dot(err, err))
        self.ae += float(np.abs(err).sum())
        self.rel += float((np.abs(err) / d).sum())

        ip = 1000.0 / np.maximum(p, CLAMP_FLOOR_M)  # 1/km
        ig = 1000.0 / d
        ierr = ip - ig
        self.ise += float(np.dot(ierr, ierr))
        self.iae += float(np.abs(ierr).sum())

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.maximum(d / p, p / d)
        ratio[bad] = np.inf
        for i, tau in enumerate(DELTAS):
            self.d[i] += int((ratio < tau).sum())

        self.pixels += n
        self.samples += 1

    def report(self, unit: str) -> MetricsReport:
        if unit not in ("m", "mm"):
            raise ConfigError(f"metrics unit {unit!r} must be 'm' or 'mm'")
        n = self.pixels
        scale = 1000.0 if unit == "mm" else 1.0
        return MetricsReport(
            rmse=float(np.sqrt(self.se / n)) * scale,
            mae=self.ae / n * scale,
            irmse=float(np.sqrt(self.ise / n)),
            imae=self.iae / n,
            rel=self.rel / n,
            d1=100.0 * self.d[0] / n,
            d2=100.0 * self.d[1] / n,
            d3=100.0 * self.d[2] / n,
            pixels=n,
            samples=self.samples,
            warnings=self.warnings,
            unit=unit,
        )


def compute_metrics(
    pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None, unit: str = "m"
) -> MetricsReport:
    """Metrics for one prediction; valid pixels default to gt > 0.

    Non-positive predictions at valid pixels count as delta failures, have
    their inverse-metric terms clamped at 1e-3 m, and increment `warnings`;
    rmse/mae/rel use the raw prediction.
    """
    acc = _Accumulator()
    acc.add(pred, gt, mask)
    return acc.report(unit)


def evaluate(model_or_fn, dataset: list, unit: str = "m", per_image: bool = False) -> MetricsReport:
    """Aggregate metrics over a dataset, pooling pixels across samples.

    `model_or_fn` is either a Model (forward run per sample, gradients off)
    or a callable Sample -> predicted (1, H, W) array. With `per_image`,
    each metric is instead the unweighted mean of per-sample values.
    """
    if not dataset:
        raise ConfigError("evaluate: empty dataset")
    fn = model_or_fn if callable(model_or_fn) else _forward_fn(model_or_fn)
    if per_image:
        reports = []
        for s in dataset:
            acc = _Accumulator()
            acc.add(fn(s), s.gt, None)
            reports.append(acc.report(unit))
        n = len(reports)
        return MetricsReport(
            rmse=sum(r.rmse for r in reports) / n,
            mae=sum(r.mae for r in reports) / n,
            irmse=sum(r.irmse for r in reports) / n,
            imae=sum(r.imae for r in reports) / n,
            rel=sum(r.rel for r in reports) / n,
            d1=sum(r.d1 for r in reports) / n,
            d2=sum(r.d2 for r in reports) / n,
            d3=sum(r.d3 for r in reports) / n,
            pixels=sum(r.pixels for r in reports),
            samples=n,
            warnings=sum(r.warnings for r in reports),
            unit=unit,
        )
    acc = _Accumulator()
    for s in dataset:
        acc.add(fn(s), s.gt, None)
    return acc.report(unit)


def _forward_fn(model):
    from .model import model_forward

    def fn(sample):
        with no_grad():
            out = model_forward(model, Tensor(sample.sparse), Tensor(sample.rgb))
        return out.data

    return fn
