import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairdp import RngStream, TrainConfig, partition_by_group, synthetic, train


@pytest.fixture(scope="session")
def two_group_ds():
    return synthetic.make_dataset(400, n_groups=2, n_features=5, seed=3)


@pytest.fixture(scope="session")
def four_group_ds():
    return synthetic.make_dataset(800, n_groups=4, n_features=5, seed=4)


def quick_config(**overrides) -> TrainConfig:
    base = dict(q=0.25, sigma=1.0, grad_clip=1.0, weight_clip=0.5, steps=12,
                seed=7, hidden_dims=(6,), switch_fraction=0.5)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def trained_run(two_group_ds):
    """One small FairDP run shared by read-only tests."""
    ds = two_group_ds
    part = partition_by_group(ds)
    cfg = quick_config(steps=16, sigma=1.5)
    result = train(ds, part, cfg, rng=RngStream(cfg.seed))
    return ds, part, cfg, result
