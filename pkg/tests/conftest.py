from __future__ import annotations

import numpy as np
import pytest

from sdformer.config import ModelConfig

# One frozen tiny configuration is reused across the suite: its windows
# tile both 16x16 (gradient checks) and 64x64 (training tests) inputs.
TINY_WINDOWS = (
    ((4, 4), (2, 2), (8, 8)),
    ((2, 2), (4, 4), (8, 8)),
    ((2, 2), (4, 4), (2, 4)),
    ((2, 2), (1, 1), (2, 1)),
)


def make_tiny_config(**overrides) -> ModelConfig:
    kw = dict(
        base_channels=6,
        blocks=(1, 1, 1, 1),
        heads=(1, 2, 4, 8),
        windows=TINY_WINDOWS,
        refinement_blocks=1,
        expansion=2.0,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return make_tiny_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
