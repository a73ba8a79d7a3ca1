from __future__ import annotations

import numpy as np
import pytest

from loopid import datagen
from loopid.datagen import (
    DataSubset,
    GenConfig,
    NoveltyTag,
    PoolId,
    Side,
    generate_longtail_dataset,
    make_period_groups,
    split_by_events,
)
from loopid.errors import ConfigurationError, SplitError


@pytest.fixture(scope="module")
def default_manifest():
    return generate_longtail_dataset(GenConfig(seed=0))


def test_forced_abundances_counts():
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), dim=4, seed=7,
                    abundances=(100, 10, 4), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    assert len(manifest.samples) == 114
    assert len(manifest.events) == 57


def test_default_profile_tag_counts(default_manifest):
    tags = [c.novelty_tag for c in default_manifest.categories]
    assert tags.count(NoveltyTag.GROUP1) == 26
    assert tags.count(NoveltyTag.GROUP2_ONLY) == 15
    assert tags.count(NoveltyTag.LEFT_OUT_UNKNOWN) == 14


def test_same_seed_identical_feature_bytes():
    cfg = GenConfig(n_categories=5, partition=(2, 2, 1), dim=6, seed=42,
                    head_abundance=200, min_abundance=48)
    a = generate_longtail_dataset(cfg)
    b = generate_longtail_dataset(cfg)
    bytes_a = b"".join(s.features.tobytes() for s in a.samples)
    bytes_b = b"".join(s.features.tobytes() for s in b.samples)
    assert bytes_a == bytes_b


def test_invalid_partition_rejected():
    with pytest.raises(ConfigurationError):
        generate_longtail_dataset(GenConfig(n_categories=5, partition=(2, 2, 2)))
    with pytest.raises(ConfigurationError):
        generate_longtail_dataset(GenConfig(n_categories=2, partition=(1, 1, 0)))


def test_longtail_shape_nonincreasing(default_manifest):
    counts = [c.abundance for c in default_manifest.categories]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert max(counts) / min(counts) >= 100


def test_events_pair_same_category(default_manifest):
    for ev in default_manifest.events:
        assert len(ev.sample_ids) == 2
        for sid in ev.sample_ids:
            assert default_manifest.sample(sid).true_category == ev.category_id


def test_split_exact_fraction():
    # A group2-only category with 100 events lands whole in one pool.
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), dim=4, seed=3,
                    abundances=(400, 200, 100), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    split = split_by_events(manifest, val_fraction=0.2, floor=20, seed=5)
    cat = manifest.categories[1]
    assert cat.novelty_tag is NoveltyTag.GROUP2_ONLY
    val_events = {
        manifest.sample(sid).event_id
        for sid, side in split.side.items()
        if side is Side.VALIDATION and manifest.sample(sid).true_category == cat.id
    }
    assert len(val_events) == 20


def test_validation_floor_small_category():
    # 60 samples (30 events) in one pool -> exactly 20 validation samples.
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), dim=4, seed=3,
                    abundances=(400, 60, 100), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    split = split_by_events(manifest, seed=5)
    cat = manifest.categories[1]
    val_samples = [
        sid for sid, side in split.side.items()
        if side is Side.VALIDATION and manifest.sample(sid).true_category == cat.id
    ]
    assert len(val_samples) == 20


def test_event_cohesion_exhaustive(small_manifest):
    split = split_by_events(small_manifest, seed=9)
    for ev in small_manifest.events:
        sides = {split.side[sid] for sid in ev.sample_ids}
        pools = {split.pool[sid] for sid in ev.sample_ids}
        assert len(sides) == 1
        assert len(pools) == 1


def test_split_error_names_category():
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), dim=4, seed=3,
                    abundances=(400, 18, 100), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    with pytest.raises(SplitError, match="category 1"):
        split_by_events(manifest, seed=5)


def test_split_determinism(small_manifest):
    a = split_by_events(small_manifest, seed=21)
    b = split_by_events(small_manifest, seed=21)
    assert a.side == b.side and a.pool == b.pool


def test_make_period_groups_default(default_manifest):
    split = split_by_events(default_manifest, seed=1)
    groups = make_period_groups(default_manifest, split)
    assert len(groups.group1_train.category_ids) == 26
    assert len(groups.group2_train.category_ids) == 41
    unknown_cats = set(groups.unknown_train.category_ids)
    assert unknown_cats.isdisjoint(set(groups.group1_train.category_ids))
    assert unknown_cats.isdisjoint(set(groups.group2_train.category_ids))
    # group2 contains everything group1 does
    assert set(groups.group1_train.category_ids) <= set(groups.group2_train.category_ids)


def test_unknown_pool_80_20_by_events():
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), dim=4, seed=3,
                    abundances=(400, 100, 200), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    split = split_by_events(manifest, seed=5)
    cat = manifest.categories[2]
    assert cat.novelty_tag is NoveltyTag.LEFT_OUT_UNKNOWN
    events = manifest.events_of(cat.id)
    assert len(events) == 100
    train_events = sum(
        1 for ev in events if split.side[ev.sample_ids[0]] is Side.TRAIN
    )
    assert train_events == 80


def test_split_preconditions():
    cfg = GenConfig(n_categories=3, partition=(1, 1, 1), abundances=(100, 100, 100), min_abundance=4)
    manifest = generate_longtail_dataset(cfg)
    with pytest.raises(ConfigurationError):
        split_by_events(manifest, val_fraction=0.0)
    with pytest.raises(ConfigurationError):
        split_by_events(manifest, floor=7)


def test_manifest_roundtrip(tmp_path, small_manifest):
    small_manifest.save(tmp_path)
    loaded = datagen.DatasetManifest.load(tmp_path)
    assert len(loaded.samples) == len(small_manifest.samples)
    assert len(loaded.events) == len(small_manifest.events)
    for a, b in zip(small_manifest.samples, loaded.samples):
        assert a.sample_id == b.sample_id and a.event_id == b.event_id
        assert a.features.tobytes() == b.features.tobytes()
    for a, b in zip(small_manifest.categories, loaded.categories):
        assert a.novelty_tag == b.novelty_tag and a.abundance == b.abundance


def test_random_config_invariants():
    # Broader sweep of this property (10^3 configs) runs in the acceptance suite.
    rng = np.random.default_rng(77)
    for _ in range(40):
        n = int(rng.integers(3, 8))
        n1 = int(rng.integers(1, n - 1))
        n2 = int(rng.integers(1, n - n1)) if n - n1 > 1 else 1
        n3 = n - n1 - n2
        if n3 < 1:
            continue
        abundances = tuple(int(2 * rng.integers(24, 150)) for _ in range(n))
        cfg = GenConfig(n_categories=n, partition=(n1, n2, n3), dim=4,
                        seed=int(rng.integers(1000)), abundances=abundances, min_abundance=4)
        manifest = generate_longtail_dataset(cfg)
        split = split_by_events(manifest, seed=int(rng.integers(1000)))
        for ev in manifest.events:
            assert split.side[ev.sample_ids[0]] is split.side[ev.sample_ids[1]]


def test_data_subset_materialization(small_manifest):
    split = split_by_events(small_manifest, seed=12)
    ids = split.samples_in(PoolId.GROUP1, Side.TRAIN)[:10]
    subset = DataSubset.from_ids(small_manifest, ids)
    assert subset.features.shape == (10, small_manifest.config.dim)
    assert np.all(subset.sample_ids == sorted(ids))
