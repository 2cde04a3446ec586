"""Loss and the training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError
from .model import Model, model_forward
from .optim import Adam, Schedule, lr_at_epoch
from .tensor import Tensor

__all__ = ["completion_loss", "train", "TrainResult"]


def completion_loss(pred: Tensor, gt: Tensor, mask: np.ndarray) -> Tensor:
    """Eq.-style combined reconstruction loss.

    (1/|S|) * sum_valid |d - p| + (1/|S|) * sum_valid (d - p)^2, where S is
    the set of valid (mask true) pixels. Invalid pixels contribute nothing.
    """
    mask = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if mask.shape != pred.data.shape:
        mask = mask.reshape(pred.data.shape)
    n_valid = int(np.count_nonzero(mask))
    if n_valid == 0:
        raise ConfigError("completion_loss: empty validity mask (|S| = 0)")
    m = Tensor(mask.astype(pred.data.dtype))
    diff = (gt - pred) * m
    scale = 1.0 / n_valid
    return (diff.abs().sum() + diff.square().sum()) * scale


@dataclass
class TrainResult:
    model: Model
    optimizer: Adam
    log: list[dict]
    rng_state: dict
    epoch: int


def train(
    model: Model,
    dataset: list,
    schedule: Schedule,
    epochs: int,
    batch_size: int,
    seed: int,
    optimizer: Adam | None = None,
    start_epoch: int = 0,
    rng_state: dict | None = None,
    log_file: str | Path | None = None,
    val_dataset: list | None = None,
    augment_hflip: bool = False,
) -> TrainResult:
    """Deterministic epoch loop: fixed shuffle order per (seed, epoch) and a
    fixed batch-accumulation order, so identical inputs give identical
    weights. Emits one JSON log line per epoch."""
    if not dataset:
        raise ConfigError("train: dataset is empty")
    if batch_size < 1:
        raise ConfigError(f"train: batch_size {batch_size} must be >= 1")
    optimizer = optimizer or Adam(dict(model.weights))
    rng = np.random.default_rng(seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state

    log: list[dict] = []
    log_fh = open(log_file, "a") if log_file else None
    try:
        for epoch in range(start_epoch, epochs):
            lr = lr_at_epoch(schedule, epoch)
            order = rng.permutation(len(dataset))
            epoch_loss = 0.0
            n_batches = 0
            for b0 in range(0, len(order), batch_size):
                batch = order[b0 : b0 + batch_size]
                optimizer.zero_grad()
                total = None
                for idx in batch:
                    s = dataset[int(idx)]
                    sparse, rgb, gt = s.sparse, s.rgb, s.gt
                    if augment_hflip and rng.random() < 0.5:
                        sparse = np.ascontiguousarray(sparse[:, :, ::-1])
                        rgb = np.ascontiguousarray(rgb[:, :, ::-1])
                        gt = np.ascontiguousarray(gt[:, :, ::-1])
                    pred = model_forward(model, Tensor(sparse), Tensor(rgb))
                    loss = completion_loss(pred, Tensor(gt), gt > 0)
                    total = loss if total is None else total + loss
                total = total * (1.0 / len(batch))
                val = total.data.item()
                if not np.isfinite(val):
                    raise NumericError(
                        f"non-finite loss {val} at epoch {epoch}, batch {n_batches}"
                    )
                total.backward()
                optimizer.step(lr)
                epoch_loss += val
                n_batches += 1
            entry = {"epoch": epoch, "lr": lr, "loss": epoch_loss / max(n_batches, 1)}
            if val_dataset:
                from .metrics import evaluate

                rep = evaluate(model, val_dataset)
                entry["val"] = rep.to_dict()
            log.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    return TrainResult(
        model=model,
        optimizer=optimizer,
        log=log,
        rng_state=rng.bit_generator.state,
        epoch=epochs,
    )
