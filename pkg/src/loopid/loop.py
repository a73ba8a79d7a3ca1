"""Multi-period orchestration: train, score, route to annotation, update, repeat.

Period 1 trains a supervised model on the first collection and fine-tunes it
with the energy margin loss against the left-out pool. Every later period
scores newly collected data, accepts high-confidence predictions as
pseudo-labels, routes low-confidence ones to an annotator, retrains on the
mix across several pseudo-label refresh repeats, re-runs the energy
fine-tune, and recalibrates the confidence threshold.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol

import numpy as np

from . import metrics as metrics_mod
from .annotation import AnnotationQueue, OracleAnnotator
from .datagen import DataSubset, PeriodGroups
from .energy import (
    CalibrationTarget,
    EnergyConfig,
    FineTuneResult,
    calibrate_threshold,
    confidence_verdicts,
    energy_score,
    fine_tune_energy,
    softmax_confidence,
)
from .errors import ConfigurationError, UpdateError
from .metrics import CategoryStats, EvaluationReport
from .model import (
    ClassifierModel,
    LabeledData,
    MixedData,
    TrainConfig,
    TrainResult,
    expand_head,
    forward,
    init_model,
    train_supervised,
)


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def digest_array(arr: np.ndarray) -> str:
    return digest_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def digest_json(obj) -> str:
    return digest_bytes(json.dumps(obj, sort_keys=True, default=str).encode())


@dataclass
class PredictionRecord:
    sample_id: int
    predicted_category: int
    logits_digest: str
    energy: float
    softmax_max: float
    confident: bool
    period: int
    label_source: str = "none"
    final_label: int | None = None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "predicted_category": self.predicted_category,
            "logits_digest": self.logits_digest,
            "energy": self.energy,
            "softmax_max": self.softmax_max,
            "confident": self.confident,
            "period": self.period,
            "label_source": self.label_source,
            "final_label": self.final_label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PredictionRecord":
        return cls(**data)


@dataclass
class PseudoLabelSet:
    """Pseudo-labels frozen for one semi-update repeat."""

    labels: dict[int, int]
    source_model_version: int
    repeat_index: int


@dataclass
class PeriodState:
    period_index: int
    known_categories: list[int]
    novel_count: int
    model_version: int
    tau: float
    temperature: float
    provenance: list[dict] = field(default_factory=list)

    def log(self, operation: str, inputs: dict, outputs: dict) -> None:
        self.provenance.append({"operation": operation, "inputs": inputs, "outputs": outputs})

    def to_dict(self) -> dict:
        return {
            "period_index": self.period_index,
            "known_categories": self.known_categories,
            "novel_count": self.novel_count,
            "model_version": self.model_version,
            "tau": self.tau,
            "temperature": self.temperature,
            "provenance": self.provenance,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodState":
        return cls(
            period_index=data["period_index"],
            known_categories=list(data["known_categories"]),
            novel_count=data["novel_count"],
            model_version=data["model_version"],
            tau=data["tau"],
            temperature=data["temperature"],
            provenance=list(data.get("provenance", [])),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PeriodState":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ArchConfig:
    hidden: int = 32
    embed: int = 8
    # Start with the class-memory gate mostly open; training trims it
    # per-dimension where the readout does not help.
    gate_init: float = 3.0
    seed: int = 0


@dataclass(frozen=True)
class UpdateConfig:
    semi_repeats: int = 3
    pseudo_fraction: float = 0.5
    oltr: bool = True
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=30,
            batch_size=64,
            lr_feature=1e-4,
            lr_classifier=0.01,
            lr_memory=1e-4,
        )
    )

    def validate(self) -> None:
        if self.semi_repeats < 1:
            raise ConfigurationError("semi_repeats must be >= 1")
        if not (0.0 <= self.pseudo_fraction <= 1.0):
            raise ConfigurationError("pseudo_fraction must be in [0,1]")
        self.train.validate()


def to_class_indices(labels: np.ndarray, categories: list[int]) -> np.ndarray:
    index = {cat: i for i, cat in enumerate(categories)}
    try:
        return np.asarray([index[int(c)] for c in labels], dtype=np.int64)
    except KeyError as exc:
        raise ConfigurationError(f"label {exc} is not a registered category") from exc


def as_labeled(subset: DataSubset, categories: list[int]) -> LabeledData:
    return LabeledData(subset.features, to_class_indices(subset.labels, categories))


def predict_categories(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    _, logits = forward(model, features)
    idx = np.atleast_2d(logits).argmax(axis=1)
    cats = np.asarray(model.categories, dtype=np.int64)
    return cats[idx]


def global_class_avg_evaluator(val: DataSubset):
    """Class-average accuracy in global category space.

    Categories absent from the model's head count as always-wrong, which is
    exactly how an unexpanded model should score on novel-category validation.
    """
    eval_categories = sorted(set(int(c) for c in val.labels))

    def evaluate(model: ClassifierModel) -> float:
        preds = predict_categories(model, val.features)
        return metrics_mod.class_average_accuracy(val.labels, preds, eval_categories)

    return evaluate


# -- scoring and partitioning ------------------------------------------------


def infer_and_partition(
    model: ClassifierModel,
    new_data: DataSubset,
    tau: float,
    temperature: float,
    period: int,
) -> tuple[list[PredictionRecord], list[PredictionRecord]]:
    """Score new samples; confident ones become pseudo-labels, the rest need humans."""
    _, logits = forward(model, new_data.features)
    logits = np.atleast_2d(logits)
    verdicts = confidence_verdicts(logits, new_data.sample_ids, temperature, tau)
    cats = np.asarray(model.categories, dtype=np.int64)
    predicted = cats[logits.argmax(axis=1)]
    high: list[PredictionRecord] = []
    low: list[PredictionRecord] = []
    for row, verdict, pred in zip(logits, verdicts, predicted):
        record = PredictionRecord(
            sample_id=verdict.sample_id,
            predicted_category=int(pred),
            logits_digest=digest_array(row),
            energy=verdict.energy,
            softmax_max=verdict.softmax_max,
            confident=verdict.confident,
            period=period,
        )
        if verdict.confident:
            record.label_source = "pseudo"
            record.final_label = int(pred)
            high.append(record)
        else:
            low.append(record)
    return high, low


def regenerate_pseudo_labels(
    model: ClassifierModel,
    candidate_ids: list[int],
    new_data: DataSubset,
    tau: float,
    temperature: float,
    repeat_index: int,
) -> PseudoLabelSet:
    """Re-predict the original high-confidence samples with the best model so far.

    Samples whose refreshed prediction falls below the threshold are dropped
    for this repeat rather than re-routed to humans.
    """
    row_of = {int(sid): i for i, sid in enumerate(new_data.sample_ids)}
    rows = [row_of[sid] for sid in candidate_ids]
    if not rows:
        return PseudoLabelSet({}, model.version, repeat_index)
    feats = new_data.features[rows]
    _, logits = forward(model, feats)
    logits = np.atleast_2d(logits)
    neg_energy = -np.atleast_1d(energy_score(logits, temperature))
    cats = np.asarray(model.categories, dtype=np.int64)
    predicted = cats[logits.argmax(axis=1)]
    labels = {
        int(sid): int(pred)
        for sid, pred, score in zip(candidate_ids, predicted, neg_energy)
        if score > tau
    }
    return PseudoLabelSet(labels, model.version, repeat_index)


# -- evaluation ---------------------------------------------------------------


def evaluate_period(
    model: ClassifierModel,
    tau: float,
    temperature: float,
    val: DataSubset,
    novel_val: DataSubset,
    period: int,
    category_names: dict[int, str],
    new_categories: list[int] | None = None,
    human_counts: dict[int, int] | None = None,
    full_counts: dict[int, int] | None = None,
    saved: float | None = None,
) -> EvaluationReport:
    """Assemble the per-period report from validation and left-out data.

    The class average and the per-category table run over every category in
    the validation set; a category the model never learned (e.g. a novel
    cluster that was entirely high-confidence and so never annotated) scores
    zero rather than vanishing from the report.
    """
    _, logits = forward(model, val.features)
    logits = np.atleast_2d(logits)
    cats = np.asarray(model.categories, dtype=np.int64)
    preds = cats[logits.argmax(axis=1)]
    neg_energy = -np.atleast_1d(energy_score(logits, temperature))
    confident = neg_energy > tau
    correct = preds == val.labels

    eval_categories = sorted(set(model.categories) | set(int(c) for c in val.labels))
    val_categories = sorted(set(int(c) for c in val.labels))
    class_avg = metrics_mod.class_average_accuracy(val.labels, preds, val_categories)
    new_avg = (
        metrics_mod.class_average_accuracy(
            val.labels, preds, [c for c in new_categories if c in val_categories]
        )
        if new_categories
        else None
    )
    ratio, acc = metrics_mod.high_confidence_stats(confident, correct)

    _, novel_logits = forward(model, novel_val.features)
    novel_conf = -np.atleast_1d(energy_score(np.atleast_2d(novel_logits), temperature)) > tau
    novel_ratio = metrics_mod.novel_detection_ratio(novel_conf)

    per_category: list[CategoryStats] = []
    for cat in eval_categories:
        mask = val.labels == cat
        n_val = int(mask.sum())
        cat_acc = float(correct[mask].mean()) if n_val else 0.0
        n_full = int(full_counts.get(cat, 0)) if full_counts else n_val
        n_used_raw = int(human_counts.get(cat, 0)) if human_counts is not None else n_full
        n_used = min(n_used_raw, n_full)  # imperfect-oracle corruption can overshoot
        if n_full > 0:
            eff = metrics_mod.label_efficiency(cat_acc, n_used, n_full)
        else:
            eff = 0.0
        per_category.append(
            CategoryStats(
                category_id=cat,
                name=category_names.get(cat, f"category_{cat}"),
                n_val=n_val,
                accuracy=cat_acc,
                n_human_annotations=n_used,
                n_full_annotations=n_full,
                efficiency=eff,
                efficiency_unbounded=bool(np.isinf(eff)),
            )
        )

    return EvaluationReport(
        period=period,
        class_avg_acc=class_avg,
        class_avg_acc_new_classes=new_avg,
        high_conf_ratio=ratio,
        high_conf_acc=acc,
        novel_detect_ratio=novel_ratio,
        saved_effort=saved,
        per_category=per_category,
    )


def softmax_baseline_stats(
    model: ClassifierModel,
    val: DataSubset,
    novel_val: DataSubset,
    match_accuracy: float | None = None,
) -> dict:
    """Softmax-confidence counterpart of the period report's headline numbers.

    With ``match_accuracy`` the threshold is chosen so the baseline's
    high-confidence accuracy lands as close as possible to the target,
    making novelty-detection ratios comparable at matched accuracy.
    """
    _, logits = forward(model, val.features)
    logits = np.atleast_2d(logits)
    cats = np.asarray(model.categories, dtype=np.int64)
    preds = cats[logits.argmax(axis=1)]
    correct = preds == val.labels
    scores = np.atleast_1d(softmax_confidence(logits))

    _, novel_logits = forward(model, novel_val.features)
    novel_scores = np.atleast_1d(softmax_confidence(np.atleast_2d(novel_logits)))

    pooled = np.unique(scores)
    candidates = np.concatenate([[pooled[0] - 1e-9], (pooled[:-1] + pooled[1:]) / 2.0])
    best = None
    for threshold in candidates:
        conf = scores > threshold
        if not conf.any():
            continue
        acc = float(correct[conf].mean())
        ratio = float(conf.mean())
        novel_ratio = float((novel_scores <= threshold).mean())
        entry = {
            "threshold": float(threshold),
            "high_conf_ratio": ratio,
            "high_conf_acc": acc,
            "novel_detect_ratio": novel_ratio,
        }
        if match_accuracy is None:
            if best is None or entry["high_conf_ratio"] > best["high_conf_ratio"]:
                best = entry
        else:
            gap = abs(acc - match_accuracy)
            # Among equally close thresholds prefer the one keeping more coverage.
            if best is None or gap < best["_gap"] - 1e-12 or (
                abs(gap - best["_gap"]) <= 1e-12 and ratio > best["high_conf_ratio"]
            ):
                entry["_gap"] = gap
                best = entry
    assert best is not None
    best.pop("_gap", None)
    return best


# -- period 1 ------------------------------------------------------------------


@dataclass
class Period1Result:
    state: PeriodState
    model: ClassifierModel
    supervised_model: ClassifierModel
    report: EvaluationReport
    train_result: TrainResult
    finetune_result: FineTuneResult
    tau: float


def run_period1(
    groups: PeriodGroups,
    train_cfg: TrainConfig,
    energy_cfg: EnergyConfig,
    arch: ArchConfig = ArchConfig(),
    calibration: CalibrationTarget = CalibrationTarget(),
    category_names: dict[int, str] | None = None,
) -> Period1Result:
    """Supervised training on the first collection, then energy fine-tuning."""
    categories = groups.group1_train.category_ids
    dim_in = groups.group1_train.features.shape[1]
    model = init_model(dim_in, arch.hidden, arch.embed, categories, seed=arch.seed, gate_init=arch.gate_init)

    train = as_labeled(groups.group1_train, categories)
    val = as_labeled(groups.group1_val, categories)
    sup = train_supervised(model, train, train_cfg, val=val)

    ft = fine_tune_energy(
        sup.model,
        known_train=train,
        unknown_train=groups.unknown_train.features,
        cfg=energy_cfg,
        known_val=groups.group1_val.features,
        unknown_val=groups.unknown_val.features,
    )

    tau = energy_cfg.tau
    if tau is None:
        _, val_logits = forward(ft.model, groups.group1_val.features)
        known_scores = -np.atleast_1d(energy_score(np.atleast_2d(val_logits), energy_cfg.temperature))
        _, unk_logits = forward(ft.model, groups.unknown_val.features)
        unknown_scores = -np.atleast_1d(energy_score(np.atleast_2d(unk_logits), energy_cfg.temperature))
        tau = calibrate_threshold(known_scores, unknown_scores, calibration)

    train_counts = {int(c): int((groups.group1_train.labels == c).sum()) for c in categories}
    report = evaluate_period(
        ft.model,
        tau,
        energy_cfg.temperature,
        groups.group1_val,
        groups.unknown_val,
        period=1,
        category_names=category_names or {},
        human_counts=train_counts,
        full_counts=train_counts,
    )

    state = PeriodState(
        period_index=1,
        known_categories=list(categories),
        novel_count=0,
        model_version=ft.model.version,
        tau=float(tau),
        temperature=energy_cfg.temperature,
    )
    state.log(
        "run_period1",
        inputs={
            "group1_train": digest_array(groups.group1_train.features),
            "unknown_train": digest_array(groups.unknown_train.features),
            "train_cfg": digest_json(vars(train_cfg)),
        },
        outputs={"model": digest_array(ft.model.Wc), "tau": f"{tau:.6f}"},
    )
    return Period1Result(state, ft.model, sup.model, report, sup, ft, float(tau))


# -- model update ----------------------------------------------------------------


@dataclass
class UpdateResult:
    model: ClassifierModel
    history: list
    pseudo_log: list[dict]
    novel_categories: list[int]
    best_val_acc: float


def run_model_update(
    model: ClassifierModel,
    human_labels: dict[int, int],
    pseudo_set: PseudoLabelSet,
    new_data: DataSubset,
    group_val: DataSubset,
    update_cfg: UpdateConfig,
    tau: float,
    temperature: float,
) -> UpdateResult:
    """Semi-supervised update over several pseudo-label refresh repeats.

    The classifier head is expanded for novel categories named by the human
    annotations before the first repeat. Within a repeat pseudo-labels are
    frozen; at each later repeat boundary they are regenerated by the best
    model so far. Returns the best-on-validation snapshot across repeats.
    """
    update_cfg.validate()
    row_of = {int(sid): i for i, sid in enumerate(new_data.sample_ids)}
    for sid in human_labels:
        if sid not in row_of:
            raise UpdateError(f"human-labeled sample {sid} is not part of the new data")

    novel = sorted(set(human_labels.values()) - set(model.categories))
    work = expand_head(model, novel)
    unknown_pseudo = set(pseudo_set.labels.values()) - set(work.categories)
    if unknown_pseudo:
        raise UpdateError(
            f"pseudo-labels name classes {sorted(unknown_pseudo)} that no human "
            "annotation covers; cannot learn an unnamed class"
        )
    if update_cfg.oltr:
        work.oltr_enabled = True

    categories = work.categories
    human_ids = sorted(human_labels)
    human_data = LabeledData(
        new_data.features[[row_of[s] for s in human_ids]] if human_ids else np.zeros((0, new_data.features.shape[1])),
        to_class_indices(np.asarray([human_labels[s] for s in human_ids]), categories),
    )
    evaluator = global_class_avg_evaluator(group_val)
    candidate_ids = sorted(pseudo_set.labels)

    pseudo = pseudo_set
    best_model: ClassifierModel | None = None
    best_acc = -np.inf
    history: list = []
    pseudo_log: list[dict] = []
    current = work
    for repeat in range(update_cfg.semi_repeats):
        if repeat > 0:
            source = best_model if best_model is not None else current
            pseudo = regenerate_pseudo_labels(
                source, candidate_ids, new_data, tau, temperature, repeat_index=repeat
            )
        pseudo_ids = sorted(pseudo.labels)
        pseudo_data = LabeledData(
            new_data.features[[row_of[s] for s in pseudo_ids]] if pseudo_ids else np.zeros((0, new_data.features.shape[1])),
            to_class_indices(np.asarray([pseudo.labels[s] for s in pseudo_ids]), categories)
            if pseudo_ids
            else np.zeros(0, dtype=np.int64),
        )
        pseudo_log.append(
            {
                "repeat_index": repeat,
                "source_model_version": pseudo.source_model_version,
                "n_pseudo": len(pseudo_ids),
                "n_human": len(human_ids),
            }
        )
        mixed = MixedData(human_data, pseudo_data, update_cfg.pseudo_fraction)
        repeat_cfg = replace(update_cfg.train, seed=update_cfg.train.seed + repeat)
        start = best_model if best_model is not None else current
        result = train_supervised(start, mixed, repeat_cfg, evaluator=evaluator)
        history.extend(result.history)
        if result.best_val_acc is not None and result.best_val_acc > best_acc:
            best_acc = result.best_val_acc
            best_model = result.model
        current = result.model
        pseudo_log[-1]["best_version_after_repeat"] = best_model.version

    assert best_model is not None
    return UpdateResult(best_model, history, pseudo_log, novel, float(best_acc))


# -- period N ---------------------------------------------------------------------


class Annotator(Protocol):
    def obtain_labels(self, queue: AnnotationQueue) -> None:
        """Blocks until every queued task is labeled."""


@dataclass
class OracleLoopAnnotator:
    """Drains the queue synchronously with the simulated oracle."""

    oracle: OracleAnnotator
    label_source: str = "oracle"

    def obtain_labels(self, queue: AnnotationQueue) -> None:
        self.oracle.drain(queue)


@dataclass
class PeriodNConfigs:
    update: UpdateConfig
    energy: EnergyConfig
    calibration: CalibrationTarget = CalibrationTarget()
    category_names: dict[int, str] = field(default_factory=dict)


@dataclass
class PeriodNResult:
    state: PeriodState
    model: ClassifierModel
    report: EvaluationReport
    high: list[PredictionRecord]
    low: list[PredictionRecord]
    human_labels: dict[int, int]
    update_result: UpdateResult
    finetune_result: FineTuneResult
    tau: float


def run_periodN(
    state: PeriodState,
    model: ClassifierModel,
    new_data: DataSubset,
    annotator: Annotator,
    configs: PeriodNConfigs,
    group_val: DataSubset,
    unknown_train: DataSubset,
    unknown_val: DataSubset,
    queue: AnnotationQueue | None = None,
    precomputed: tuple[list[PredictionRecord], list[PredictionRecord]] | None = None,
) -> PeriodNResult:
    """One full collection period: score, annotate, update, re-tune, evaluate."""
    period = state.period_index + 1
    if precomputed is not None:
        high, low = precomputed
    else:
        high, low = infer_and_partition(model, new_data, state.tau, state.temperature, period)

    if queue is None:
        queue = AnnotationQueue()
    queue.enqueue_low_confidence(low)
    annotator.obtain_labels(queue)
    if not queue.is_drained():
        raise UpdateError("annotator returned before the queue was drained")
    labels = queue.labels()
    human_labels = {r.sample_id: labels[r.sample_id] for r in low}
    annotator_source = getattr(annotator, "label_source", "human")
    for record in low:
        record.final_label = human_labels[record.sample_id]
        record.label_source = annotator_source
    return finish_period(
        state, model, new_data, high, low, human_labels, configs,
        group_val, unknown_train, unknown_val,
    )


def finish_period(
    state: PeriodState,
    model: ClassifierModel,
    new_data: DataSubset,
    high: list[PredictionRecord],
    low: list[PredictionRecord],
    human_labels: dict[int, int],
    configs: PeriodNConfigs,
    group_val: DataSubset,
    unknown_train: DataSubset,
    unknown_val: DataSubset,
) -> PeriodNResult:
    """Update, re-fine-tune, recalibrate, and evaluate once labels are in."""
    period = state.period_index + 1
    pseudo_set = PseudoLabelSet(
        {r.sample_id: r.final_label for r in high},
        source_model_version=model.version,
        repeat_index=0,
    )
    update = run_model_update(
        model,
        human_labels,
        pseudo_set,
        new_data,
        group_val,
        configs.update,
        state.tau,
        state.temperature,
    )

    # Re-tune novelty sensitivity with the same left-out pool, as in period 1.
    categories = update.model.categories
    labeled_ids = sorted(set(human_labels) | set(pseudo_set.labels))
    row_of = {int(sid): i for i, sid in enumerate(new_data.sample_ids)}
    final_labels = dict(pseudo_set.labels)
    final_labels.update(human_labels)
    known_train = LabeledData(
        new_data.features[[row_of[s] for s in labeled_ids]],
        to_class_indices(np.asarray([final_labels[s] for s in labeled_ids]), categories),
    )
    ft = fine_tune_energy(
        update.model,
        known_train=known_train,
        unknown_train=unknown_train.features,
        cfg=configs.energy,
        known_val=group_val.features,
        unknown_val=unknown_val.features,
    )

    tau = configs.energy.tau
    if tau is None:
        _, val_logits = forward(ft.model, group_val.features)
        known_scores = -np.atleast_1d(energy_score(np.atleast_2d(val_logits), configs.energy.temperature))
        _, unk_logits = forward(ft.model, unknown_val.features)
        unknown_scores = -np.atleast_1d(energy_score(np.atleast_2d(unk_logits), configs.energy.temperature))
        tau = calibrate_threshold(known_scores, unknown_scores, configs.calibration)

    full_counts = {int(c): int((new_data.labels == c).sum()) for c in set(new_data.labels.tolist())}
    human_counts: dict[int, int] = {}
    for label in human_labels.values():
        human_counts[label] = human_counts.get(label, 0) + 1
    report = evaluate_period(
        ft.model,
        tau,
        configs.energy.temperature,
        group_val,
        unknown_val,
        period=period,
        category_names=configs.category_names,
        new_categories=update.novel_categories,
        human_counts=human_counts,
        full_counts=full_counts,
        saved=metrics_mod.saved_effort(len(low), len(new_data)),
    )

    new_state = PeriodState(
        period_index=period,
        known_categories=list(categories),
        novel_count=len(update.novel_categories),
        model_version=ft.model.version,
        tau=float(tau),
        temperature=configs.energy.temperature,
        provenance=list(state.provenance),
    )
    new_state.log(
        "run_periodN",
        inputs={
            "new_data": digest_array(new_data.features),
            "model": digest_array(model.Wc),
            "tau_in": f"{state.tau:.6f}",
        },
        outputs={
            "n_high": str(len(high)),
            "n_low": str(len(low)),
            "novel": str(len(update.novel_categories)),
            "model": digest_array(ft.model.Wc),
            "tau": f"{float(tau):.6f}",
        },
    )
    return PeriodNResult(
        new_state, ft.model, report, high, low, human_labels, update, ft, float(tau)
    )


# -- baselines -------------------------------------------------------------------


def run_pseudo_only_ablation(
    state: PeriodState,
    model: ClassifierModel,
    new_data: DataSubset,
    group_val: DataSubset,
    update_cfg: UpdateConfig,
) -> UpdateResult:
    """Model update without any human labels: low-confidence samples are dropped."""
    high, _ = infer_and_partition(model, new_data, state.tau, state.temperature, state.period_index + 1)
    pseudo_set = PseudoLabelSet(
        {r.sample_id: r.final_label for r in high},
        source_model_version=model.version,
        repeat_index=0,
    )
    return run_model_update(
        model, {}, pseudo_set, new_data, group_val, update_cfg, state.tau, state.temperature
    )


def run_transfer_baseline(
    model: ClassifierModel,
    new_data: DataSubset,
    group_val: DataSubset,
    update_cfg: UpdateConfig,
) -> TrainResult:
    """Traditional transfer learning: full human annotation of the new data.

    The head is expanded to every category in the fully annotated set, the
    class memory stays off, and training runs the same total epoch budget as
    the semi-supervised update.
    """
    categories_new = sorted(set(int(c) for c in new_data.labels))
    work = expand_head(model, [c for c in categories_new if c not in model.categories])
    work.oltr_enabled = False
    total_epochs = update_cfg.semi_repeats * update_cfg.train.epochs
    cfg = replace(update_cfg.train, epochs=total_epochs)
    train = as_labeled(new_data, work.categories)
    return train_supervised(work, train, cfg, evaluator=global_class_avg_evaluator(group_val))
