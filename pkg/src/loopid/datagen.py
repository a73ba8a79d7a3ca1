"""Synthetic long-tailed dataset generation, event-based splitting, and period grouping.

The generator stands in for a multi-season camera-trap collection: each
category is a Gaussian feature cluster, abundances follow a long-tailed
profile, and samples come in near-duplicate pairs (one trigger event = two
photographs). Splitting respects event boundaries so paired samples never
straddle the train/validation line.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SplitError

MANIFEST_SCHEMA_VERSION = 1

HEADER_FILE = "header.json"
SAMPLES_FILE = "samples.jsonl"


class NoveltyTag(str, Enum):
    GROUP1 = "group1"
    GROUP2_ONLY = "group2_only"
    LEFT_OUT_UNKNOWN = "left_out_unknown"


class Side(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"


class PoolId(str, Enum):
    GROUP1 = "group1"
    GROUP2 = "group2"
    UNKNOWN_POOL = "unknown_pool"


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the synthetic universe.

    ``partition`` gives the number of categories tagged (group1, group2_only,
    left_out_unknown), assigned in descending-abundance order. Abundances are
    ``head_abundance * rank^(-tail_exponent)`` rounded to whole events and
    clipped at ``min_abundance``; ``abundances`` overrides the profile with
    explicit per-category targets.
    """

    n_categories: int = 55
    tail_exponent: float = 1.3
    dim: int = 16
    seed: int = 0
    partition: tuple[int, int, int] = (26, 15, 14)
    head_abundance: int = 8000
    min_abundance: int = 40
    mean_spread: float = 2.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    pair_jitter: float = 0.1
    abundances: tuple[int, ...] | None = None

    def validate(self) -> None:
        if self.n_categories < 3:
            raise ConfigurationError(f"n_categories must be >= 3, got {self.n_categories}")
        if len(self.partition) != 3 or any(p < 0 for p in self.partition):
            raise ConfigurationError(f"partition must be 3 non-negative sizes, got {self.partition}")
        if sum(self.partition) != self.n_categories:
            raise ConfigurationError(
                f"partition sizes {self.partition} must sum to n_categories={self.n_categories}"
            )
        if self.dim < 1:
            raise ConfigurationError("feature dim must be >= 1")
        if self.abundances is not None and len(self.abundances) != self.n_categories:
            raise ConfigurationError(
                f"abundances override has {len(self.abundances)} entries for "
                f"{self.n_categories} categories"
            )
        if self.abundances is not None and any(a < 1 for a in self.abundances):
            raise ConfigurationError("abundance targets must be >= 1")


@dataclass(frozen=True)
class CategorySpec:
    id: int
    name: str
    abundance: int
    novelty_tag: NoveltyTag
    cluster_mean: np.ndarray
    cluster_scale: float


@dataclass(frozen=True)
class TriggerEvent:
    event_id: int
    sample_ids: tuple[int, int]
    category_id: int


@dataclass(frozen=True)
class Sample:
    sample_id: int
    event_id: int
    features: np.ndarray
    true_category: int


@dataclass
class DatasetManifest:
    config: GenConfig
    categories: list[CategorySpec]
    samples: list[Sample]
    events: list[TriggerEvent]

    def __post_init__(self) -> None:
        self._samples_by_id = {s.sample_id: s for s in self.samples}
        self._categories_by_id = {c.id: c for c in self.categories}
        self._events_by_category: dict[int, list[TriggerEvent]] = {}
        for ev in self.events:
            self._events_by_category.setdefault(ev.category_id, []).append(ev)

    def sample(self, sample_id: int) -> Sample:
        return self._samples_by_id[sample_id]

    def category(self, category_id: int) -> CategorySpec:
        return self._categories_by_id[category_id]

    def events_of(self, category_id: int) -> list[TriggerEvent]:
        return self._events_by_category.get(category_id, [])

    def categories_tagged(self, tag: NoveltyTag) -> list[CategorySpec]:
        return [c for c in self.categories if c.novelty_tag == tag]

    def true_labels(self) -> dict[int, int]:
        """sample_id -> ground truth category; for the oracle and metrics only."""
        return {s.sample_id: s.true_category for s in self.samples}

    def features_of(self, sample_ids: list[int]) -> np.ndarray:
        return np.stack([self._samples_by_id[sid].features for sid in sample_ids])

    def save(self, out_dir: str | Path) -> None:
        """Persist as a JSON header plus one JSON-lines record per sample."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "seed": self.config.seed,
            "config": gen_config_to_dict(self.config),
            "categories": [
                {
                    "id": c.id,
                    "name": c.name,
                    "abundance": c.abundance,
                    "novelty_tag": c.novelty_tag.value,
                    "cluster_mean": [float(v) for v in c.cluster_mean],
                    "cluster_scale": float(c.cluster_scale),
                }
                for c in self.categories
            ],
        }
        (out / HEADER_FILE).write_text(json.dumps(header, indent=2, sort_keys=True))
        with (out / SAMPLES_FILE).open("w") as fh:
            for s in self.samples:
                payload = base64.b64encode(s.features.astype("<f8").tobytes()).decode("ascii")
                fh.write(
                    json.dumps(
                        {
                            "sample_id": s.sample_id,
                            "event_id": s.event_id,
                            "category_id": s.true_category,
                            "features": payload,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, in_dir: str | Path) -> "DatasetManifest":
        src = Path(in_dir)
        header = json.loads((src / HEADER_FILE).read_text())
        config = gen_config_from_dict(header["config"])
        categories = [
            CategorySpec(
                id=c["id"],
                name=c["name"],
                abundance=c["abundance"],
                novelty_tag=NoveltyTag(c["novelty_tag"]),
                cluster_mean=np.asarray(c["cluster_mean"], dtype=np.float64),
                cluster_scale=c["cluster_scale"],
            )
            for c in header["categories"]
        ]
        samples: list[Sample] = []
        by_event: dict[int, list[int]] = {}
        event_category: dict[int, int] = {}
        with (src / SAMPLES_FILE).open() as fh:
            for line in fh:
                rec = json.loads(line)
                features = np.frombuffer(base64.b64decode(rec["features"]), dtype="<f8").copy()
                samples.append(
                    Sample(
                        sample_id=rec["sample_id"],
                        event_id=rec["event_id"],
                        features=features,
                        true_category=rec["category_id"],
                    )
                )
                by_event.setdefault(rec["event_id"], []).append(rec["sample_id"])
                event_category[rec["event_id"]] = rec["category_id"]
        events = []
        for event_id in sorted(by_event):
            members = sorted(by_event[event_id])
            if len(members) != 2:
                raise ConfigurationError(
                    f"event {event_id} has {len(members)} samples; trigger events pair exactly 2"
                )
            events.append(
                TriggerEvent(
                    event_id=event_id,
                    sample_ids=(members[0], members[1]),
                    category_id=event_category[event_id],
                )
            )
        return cls(config=config, categories=categories, samples=samples, events=events)


def gen_config_to_dict(config: GenConfig) -> dict:
    return {
        "n_categories": config.n_categories,
        "tail_exponent": config.tail_exponent,
        "dim": config.dim,
        "seed": config.seed,
        "partition": list(config.partition),
        "head_abundance": config.head_abundance,
        "min_abundance": config.min_abundance,
        "mean_spread": config.mean_spread,
        "scale_range": list(config.scale_range),
        "pair_jitter": config.pair_jitter,
        "abundances": list(config.abundances) if config.abundances is not None else None,
    }


def gen_config_from_dict(data: dict) -> GenConfig:
    return GenConfig(
        n_categories=data["n_categories"],
        tail_exponent=data["tail_exponent"],
        dim=data["dim"],
        seed=data["seed"],
        partition=tuple(data["partition"]),
        head_abundance=data["head_abundance"],
        min_abundance=data["min_abundance"],
        mean_spread=data["mean_spread"],
        scale_range=tuple(data["scale_range"]),
        pair_jitter=data["pair_jitter"],
        abundances=tuple(data["abundances"]) if data.get("abundances") is not None else None,
    )


def _profile_abundances(config: GenConfig) -> list[int]:
    """Long-tail targets rounded to whole events (even counts), non-increasing."""
    if config.abundances is not None:
        return [a + (a % 2) for a in config.abundances]
    out = []
    for rank in range(1, config.n_categories + 1):
        target = config.head_abundance * rank ** (-config.tail_exponent)
        target = max(float(config.min_abundance), target)
        events = max(1, int(round(target / 2.0)))
        out.append(2 * events)
    return out


def generate_longtail_dataset(config: GenConfig) -> DatasetManifest:
    """Build a reproducible synthetic manifest from ``config``.

    Categories are isotropic Gaussian clusters; means for all categories
    (including the left-out ones) are drawn from one shared prior so novel
    clusters can overlap known ones. Each trigger event pairs a sample with a
    jittered near-duplicate, which is what makes event-aware splitting matter.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    abundances = _profile_abundances(config)

    n1, n2, _ = config.partition
    categories = []
    for idx in range(config.n_categories):
        if idx < n1:
            tag = NoveltyTag.GROUP1
        elif idx < n1 + n2:
            tag = NoveltyTag.GROUP2_ONLY
        else:
            tag = NoveltyTag.LEFT_OUT_UNKNOWN
        mean = rng.normal(0.0, config.mean_spread, size=config.dim)
        scale = float(rng.uniform(*config.scale_range))
        categories.append(
            CategorySpec(
                id=idx,
                name=f"species_{idx:02d}",
                abundance=abundances[idx],
                novelty_tag=tag,
                cluster_mean=mean,
                cluster_scale=scale,
            )
        )

    samples: list[Sample] = []
    events: list[TriggerEvent] = []
    sample_id = 0
    event_id = 0
    for cat in categories:
        n_events = cat.abundance // 2
        for _ in range(n_events):
            first = cat.cluster_mean + cat.cluster_scale * rng.standard_normal(config.dim)
            second = first + config.pair_jitter * cat.cluster_scale * rng.standard_normal(config.dim)
            samples.append(Sample(sample_id, event_id, first, cat.id))
            samples.append(Sample(sample_id + 1, event_id, second, cat.id))
            events.append(TriggerEvent(event_id, (sample_id, sample_id + 1), cat.id))
            sample_id += 2
            event_id += 1

    return DatasetManifest(config=config, categories=categories, samples=samples, events=events)


@dataclass
class SplitAssignment:
    """Per-sample train/validation side and collection-pool membership."""

    side: dict[int, Side]
    pool: dict[int, PoolId]
    seed: int
    val_fraction: float
    floor: int

    def samples_in(self, pool: PoolId, side: Side) -> list[int]:
        return sorted(
            sid for sid, p in self.pool.items() if p == pool and self.side[sid] == side
        )


def _validation_event_count(
    n_events: int, n_samples: int, val_fraction: float, floor: int, known: bool
) -> int:
    # Small known categories get a fixed-size validation set so per-class
    # accuracy estimates stay usable; 4*floor mirrors the 80-sample cutoff at
    # floor=20. The left-out pool is a plain fraction split: most of it must
    # stay available for fine-tuning.
    if known and n_samples < 4 * floor:
        return min(n_events, math.ceil(floor / 2))
    return max(1, int(val_fraction * n_events))


def split_by_events(
    manifest: DatasetManifest,
    val_fraction: float = 0.2,
    floor: int = 20,
    seed: int = 0,
    group1_period1_fraction: float = 0.5,
) -> SplitAssignment:
    """Assign every sample a pool (collection period) and a train/val side.

    Events are the unit of assignment: both samples of an event always land
    together. group1-tagged categories contribute events to both collection
    pools (``group1_period1_fraction`` of them to the first); group2_only
    categories appear only in the second pool; left-out categories form the
    unknown pool. Within each (pool, category) the validation share is
    ``val_fraction`` of events, except small known categories which get
    exactly ``floor`` validation samples; the unknown pool is always a plain
    fraction split so most of it stays available for fine-tuning.
    """
    if not (0.0 < val_fraction < 1.0):
        raise ConfigurationError(f"val_fraction must be in (0,1), got {val_fraction}")
    if floor < 2 or floor % 2 != 0:
        raise ConfigurationError(f"floor must be even and >= 2, got {floor}")
    if not (0.0 < group1_period1_fraction < 1.0):
        raise ConfigurationError("group1_period1_fraction must be in (0,1)")

    rng = np.random.default_rng(seed)
    side: dict[int, Side] = {}
    pool: dict[int, PoolId] = {}

    for cat in manifest.categories:
        events = sorted(manifest.events_of(cat.id), key=lambda e: e.event_id)
        if cat.novelty_tag == NoveltyTag.GROUP1:
            order = rng.permutation(len(events))
            n_first = int(round(group1_period1_fraction * len(events)))
            pools = {
                PoolId.GROUP1: [events[i] for i in order[:n_first]],
                PoolId.GROUP2: [events[i] for i in order[n_first:]],
            }
        elif cat.novelty_tag == NoveltyTag.GROUP2_ONLY:
            pools = {PoolId.GROUP2: events}
        else:
            pools = {PoolId.UNKNOWN_POOL: events}

        for pool_id, pool_events in pools.items():
            n_samples = 2 * len(pool_events)
            known = pool_id is not PoolId.UNKNOWN_POOL
            if known and n_samples < floor:
                raise SplitError(
                    f"category {cat.id} ({cat.name}) has {n_samples} samples in "
                    f"{pool_id.value}, fewer than the floor of {floor}"
                )
            if not known and len(pool_events) < 2:
                raise SplitError(
                    f"category {cat.id} ({cat.name}) has {len(pool_events)} events; "
                    "the unknown pool needs at least 2 to split"
                )
            n_val = _validation_event_count(len(pool_events), n_samples, val_fraction, floor, known)
            order = rng.permutation(len(pool_events))
            val_ids = {pool_events[i].event_id for i in order[:n_val]}
            for ev in pool_events:
                ev_side = Side.VALIDATION if ev.event_id in val_ids else Side.TRAIN
                for sid in ev.sample_ids:
                    side[sid] = ev_side
                    pool[sid] = pool_id

    return SplitAssignment(side=side, pool=pool, seed=seed, val_fraction=val_fraction, floor=floor)


@dataclass(frozen=True)
class DataSubset:
    """A materialized slice of the manifest: features plus hidden truth."""

    sample_ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def category_ids(self) -> list[int]:
        return sorted(set(int(c) for c in self.labels))

    @classmethod
    def from_ids(cls, manifest: DatasetManifest, sample_ids: list[int]) -> "DataSubset":
        ids = np.asarray(sorted(sample_ids), dtype=np.int64)
        feats = manifest.features_of([int(i) for i in ids])
        labels = np.asarray([manifest.sample(int(i)).true_category for i in ids], dtype=np.int64)
        return cls(sample_ids=ids, features=feats, labels=labels)


@dataclass(frozen=True)
class PeriodGroups:
    group1_train: DataSubset
    group1_val: DataSubset
    group2_train: DataSubset
    group2_val: DataSubset
    unknown_train: DataSubset
    unknown_val: DataSubset


def make_period_groups(manifest: DatasetManifest, split: SplitAssignment) -> PeriodGroups:
    """Materialize the six train/validation sets the two-period protocol uses."""
    def subset(pool_id: PoolId, side: Side) -> DataSubset:
        return DataSubset.from_ids(manifest, split.samples_in(pool_id, side))

    return PeriodGroups(
        group1_train=subset(PoolId.GROUP1, Side.TRAIN),
        group1_val=subset(PoolId.GROUP1, Side.VALIDATION),
        group2_train=subset(PoolId.GROUP2, Side.TRAIN),
        group2_val=subset(PoolId.GROUP2, Side.VALIDATION),
        unknown_train=subset(PoolId.UNKNOWN_POOL, Side.TRAIN),
        unknown_val=subset(PoolId.UNKNOWN_POOL, Side.VALIDATION),
    )


def default_gen_config(seed: int = 0) -> GenConfig:
    """The default 55-category profile with a >=100x abundance spread."""
    return GenConfig(seed=seed)


def small_gen_config(seed: int = 0) -> GenConfig:
    """A miniature profile for quick tests: 8 categories, short tail.

    The minimum abundance keeps every per-pool share of a group1 category
    above the 20-sample validation floor with training events to spare.
    """
    return GenConfig(
        n_categories=8,
        partition=(4, 2, 2),
        dim=8,
        head_abundance=240,
        min_abundance=80,
        seed=seed,
    )
