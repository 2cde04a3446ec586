"""Overfit acceptance run: tiny model, 4 synthetic 64x64 samples, 500 Adam
steps, target training RMSE < 0.05 m. Prints progress every 50 steps and the
nearest-neighbor-fill floor for comparison.

Usage: python scripts/run_overfit.py
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

import numpy as np  # noqa: E402

from sdformer.baseline import nn_fill  # noqa: E402
from sdformer.metrics import evaluate  # noqa: E402
from sdformer.model import build_model, model_forward  # noqa: E402
from sdformer.optim import Adam  # noqa: E402
from sdformer.tensor import Tensor, no_grad  # noqa: E402
from sdformer.training import train  # noqa: E402

from test_acceptance import (  # noqa: E402
    OVERFIT_BETA2,
    OVERFIT_PATTERN,
    OVERFIT_SCHEDULE,
    _overfit_setup,
    rmse_on,
)


def main() -> int:
    ds, model, opt = _overfit_setup()
    floor = evaluate(lambda s: nn_fill(s.sparse), ds).rmse
    print(f"nearest-neighbor-fill floor: {floor:.4f} m (threshold 0.05 m)")
    t0 = time.time()
    res = None
    for upto in range(50, 501, 50):
        res = train(model, ds, OVERFIT_SCHEDULE, epochs=upto, batch_size=4,
                    seed=5, optimizer=opt,
                    start_epoch=(upto - 50), rng_state=res.rng_state if res else None)
        print(f"step {upto:3d}  train RMSE {rmse_on(model, ds):.4f} m  "
              f"({time.time() - t0:.0f}s)", flush=True)
    final = rmse_on(model, ds)
    ok = final < 0.05
    print(f"\nfinal train RMSE {final:.4f} m -> {'PASS' if ok else 'FAIL'} "
          f"(total {time.time() - t0:.0f}s)")
    return 0 if ok else 3


if __name__ == "__main__":
    raise SystemExit(main())
