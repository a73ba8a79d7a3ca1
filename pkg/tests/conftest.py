from __future__ import annotations

import pytest

from loopid import datagen
from loopid.config import small_config
from loopid.loop import run_period1


@pytest.fixture(scope="session")
def small_manifest() -> datagen.DatasetManifest:
    return datagen.generate_longtail_dataset(datagen.small_gen_config(seed=11))


@pytest.fixture(scope="session")
def small_groups(small_manifest) -> datagen.PeriodGroups:
    split = datagen.split_by_events(small_manifest, seed=12)
    return datagen.make_period_groups(small_manifest, split)


@pytest.fixture(scope="session")
def small_period1(small_groups):
    """Period-1 result on the miniature profile, shared by loop/service tests."""
    cfg = small_config(seed=11)
    return run_period1(
        small_groups,
        cfg.period1_train,
        cfg.period1_energy,
        arch=cfg.arch,
        calibration=cfg.calibration,
    )
