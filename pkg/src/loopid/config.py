"""Experiment configuration: one JSON file binding every module's knobs.

Defaults follow the published training recipe (epochs, batch sizes, momentum,
weight decay, semi-repeats, known:unknown ratio, loss weight). Temperatures
and the confidence threshold are data-dependent: tau defaults to per-period
calibration and the temperature to 1.0 for the synthetic profile.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .datagen import GenConfig, gen_config_from_dict, gen_config_to_dict
from .energy import CalibrationTarget, EnergyConfig
from .errors import ConfigurationError
from .loop import ArchConfig, UpdateConfig
from .model import TrainConfig

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SplitConfig:
    val_fraction: float = 0.2
    floor: int = 20
    seed: int = 0
    group1_period1_fraction: float = 0.5


@dataclass(frozen=True)
class AnnotatorConfig:
    mode: str = "oracle"
    error_rate: float = 0.0
    seed: int = 0
    lease_seconds: float = 600.0
    wait_timeout: float | None = None

    def validate(self) -> None:
        if self.mode not in ("oracle", "human"):
            raise ConfigurationError(f"annotator mode must be oracle or human, got {self.mode!r}")
        if not (0.0 <= self.error_rate < 1.0):
            raise ConfigurationError("error_rate must be in [0,1)")


@dataclass(frozen=True)
class ServiceConfig:
    bind: str = "127.0.0.1:8321"
    token: str | None = None

    @property
    def host(self) -> str:
        return self.bind.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.bind.rsplit(":", 1)[1])


@dataclass
class ExperimentConfig:
    seed: int = 0
    gen: GenConfig = field(default_factory=GenConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    period1_train: TrainConfig = field(default_factory=TrainConfig)
    period1_energy: EnergyConfig = field(default_factory=EnergyConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    periodn_energy: EnergyConfig = field(default_factory=EnergyConfig)
    calibration: CalibrationTarget = field(default_factory=CalibrationTarget)
    annotator: AnnotatorConfig = field(default_factory=AnnotatorConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    spotcheck_k: int = 0
    merge_spot_corrections: bool = False

    def validate(self) -> None:
        self.gen.validate()
        self.period1_train.validate()
        self.period1_energy.validate()
        self.update.validate()
        self.periodn_energy.validate()
        self.calibration.validate()
        self.annotator.validate()


def _train_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr_feature": cfg.lr_feature,
        "lr_classifier": cfg.lr_classifier,
        "lr_memory": cfg.lr_memory,
        "lr_decay_epochs": cfg.lr_decay_epochs,
        "lr_decay_ratio": cfg.lr_decay_ratio,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "seed": cfg.seed,
    }


def _train_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(**data)


def _energy_to_dict(cfg: EnergyConfig) -> dict:
    return {
        "temperature": cfg.temperature,
        "tau": cfg.tau,
        "margin_known": cfg.margin_known,
        "margin_unknown": cfg.margin_unknown,
        "energy_weight": cfg.energy_weight,
        "known_unknown_ratio": list(cfg.known_unknown_ratio),
        "margin_known_pct": cfg.margin_known_pct,
        "margin_unknown_pct": cfg.margin_unknown_pct,
        "fine_tune": _train_to_dict(cfg.fine_tune),
    }


def _energy_from_dict(data: dict) -> EnergyConfig:
    data = dict(data)
    data["known_unknown_ratio"] = tuple(data["known_unknown_ratio"])
    data["fine_tune"] = _train_from_dict(data["fine_tune"])
    return EnergyConfig(**data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": cfg.seed,
        "gen": gen_config_to_dict(cfg.gen),
        "split": {
            "val_fraction": cfg.split.val_fraction,
            "floor": cfg.split.floor,
            "seed": cfg.split.seed,
            "group1_period1_fraction": cfg.split.group1_period1_fraction,
        },
        "arch": {
            "hidden": cfg.arch.hidden,
            "embed": cfg.arch.embed,
            "gate_init": cfg.arch.gate_init,
            "seed": cfg.arch.seed,
        },
        "period1_train": _train_to_dict(cfg.period1_train),
        "period1_energy": _energy_to_dict(cfg.period1_energy),
        "update": {
            "semi_repeats": cfg.update.semi_repeats,
            "pseudo_fraction": cfg.update.pseudo_fraction,
            "oltr": cfg.update.oltr,
            "train": _train_to_dict(cfg.update.train),
        },
        "periodn_energy": _energy_to_dict(cfg.periodn_energy),
        "calibration": {"mode": cfg.calibration.mode, "floor": cfg.calibration.floor},
        "annotator": {
            "mode": cfg.annotator.mode,
            "error_rate": cfg.annotator.error_rate,
            "seed": cfg.annotator.seed,
            "lease_seconds": cfg.annotator.lease_seconds,
            "wait_timeout": cfg.annotator.wait_timeout,
        },
        "service": {"bind": cfg.service.bind, "token": cfg.service.token},
        "spotcheck_k": cfg.spotcheck_k,
        "merge_spot_corrections": cfg.merge_spot_corrections,
    }


def config_from_dict(data: dict) -> ExperimentConfig:
    return ExperimentConfig(
        seed=data["seed"],
        gen=gen_config_from_dict(data["gen"]),
        split=SplitConfig(**data["split"]),
        arch=ArchConfig(**data["arch"]),
        period1_train=_train_from_dict(data["period1_train"]),
        period1_energy=_energy_from_dict(data["period1_energy"]),
        update=UpdateConfig(
            semi_repeats=data["update"]["semi_repeats"],
            pseudo_fraction=data["update"]["pseudo_fraction"],
            oltr=data["update"]["oltr"],
            train=_train_from_dict(data["update"]["train"]),
        ),
        periodn_energy=_energy_from_dict(data["periodn_energy"]),
        calibration=CalibrationTarget(**data["calibration"]),
        annotator=AnnotatorConfig(**data["annotator"]),
        service=ServiceConfig(**data["service"]),
        spotcheck_k=data.get("spotcheck_k", 0),
        merge_spot_corrections=data.get("merge_spot_corrections", False),
    )


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(data)
    cfg.validate()
    return cfg


def default_config(seed: int = 0) -> ExperimentConfig:
    """Default two-period experiment with deterministic per-stage seeds."""
    return ExperimentConfig(
        seed=seed,
        gen=GenConfig(seed=seed),
        split=SplitConfig(seed=seed + 1),
        arch=ArchConfig(seed=seed + 2),
        period1_train=TrainConfig(
            epochs=40,
            batch_size=64,
            lr_feature=0.05,
            lr_classifier=0.5,
            lr_memory=0.02,
            lr_decay_epochs=10,
            lr_decay_ratio=0.1,
            momentum=0.9,
            weight_decay=0.0005,
            seed=seed + 3,
        ),
        period1_energy=EnergyConfig(
            temperature=1.0,
            energy_weight=0.01,
            known_unknown_ratio=(1, 2),
            fine_tune=TrainConfig(
                epochs=10,
                batch_size=96,
                lr_feature=5e-3,
                lr_classifier=5e-2,
                lr_memory=5e-3,
                seed=seed + 4,
            ),
        ),
        update=UpdateConfig(
            semi_repeats=3,
            pseudo_fraction=0.5,
            oltr=True,
            train=TrainConfig(
                epochs=30,
                batch_size=64,
                lr_feature=0.02,
                lr_classifier=0.2,
                lr_memory=0.002,
                lr_decay_epochs=10,
                lr_decay_ratio=0.1,
                momentum=0.9,
                weight_decay=0.0005,
                seed=seed + 5,
            ),
        ),
        periodn_energy=EnergyConfig(
            temperature=1.0,
            energy_weight=0.01,
            known_unknown_ratio=(1, 2),
            fine_tune=TrainConfig(
                epochs=10,
                batch_size=96,
                lr_feature=5e-4,
                lr_classifier=5e-3,
                lr_memory=5e-4,
                seed=seed + 6,
            ),
        ),
        annotator=AnnotatorConfig(seed=seed + 7),
    )


def small_config(seed: int = 0) -> ExperimentConfig:
    """Miniature profile for fast tests: fewer categories, shorter schedules."""
    from .datagen import small_gen_config

    cfg = default_config(seed)
    cfg.gen = small_gen_config(seed)
    cfg.period1_train = replace(cfg.period1_train, epochs=15)
    cfg.period1_energy = replace(
        cfg.period1_energy, fine_tune=replace(cfg.period1_energy.fine_tune, epochs=5)
    )
    cfg.update = UpdateConfig(
        semi_repeats=2,
        pseudo_fraction=cfg.update.pseudo_fraction,
        oltr=cfg.update.oltr,
        train=replace(cfg.update.train, epochs=8),
    )
    cfg.periodn_energy = replace(
        cfg.periodn_energy, fine_tune=replace(cfg.periodn_energy.fine_tune, epochs=5)
    )
    return cfg
