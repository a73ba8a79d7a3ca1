"""Checkpointed execution of a multi-period experiment in an output directory.

Every pipeline stage persists its artifacts before the next one starts, so an
interrupted run (including one waiting on human annotation) resumes from the
last completed stage. Reports contain no timestamps; two runs of the same
config produce byte-identical report files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import AnnotationQueue, OracleAnnotator, oracle_spot_check, spot_check
from .config import ExperimentConfig, config_to_dict, save_config
from .datagen import (
    DatasetManifest,
    PeriodGroups,
    generate_longtail_dataset,
    make_period_groups,
    split_by_events,
)
from .energy import write_calibration_report
from .errors import ConfigurationError
from .loop import (
    Annotator,
    OracleLoopAnnotator,
    PeriodNConfigs,
    PeriodState,
    PredictionRecord,
    digest_json,
    finish_period,
    infer_and_partition,
    run_period1,
    softmax_baseline_stats,
)
from .metrics import EvaluationReport
from .model import ClassifierModel, load_model, save_model


@dataclass
class Projector:
    """Fixed 2-D PCA projection fitted on the first training collection."""

    mean: np.ndarray
    components: np.ndarray  # (2, D)

    @classmethod
    def fit(cls, features: np.ndarray) -> "Projector":
        mean = features.mean(axis=0)
        centered = features - mean
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        return cls(mean=mean, components=vt[:2])

    def project(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(features) - self.mean) @ self.components.T


@dataclass
class RunSummary:
    out_dir: Path
    reports: dict[int, EvaluationReport] = field(default_factory=dict)
    states: dict[int, PeriodState] = field(default_factory=dict)
    models: dict[int, ClassifierModel] = field(default_factory=dict)


class ExperimentRunner:
    """Drives data generation and periods 1..N with stage-level resume."""

    def __init__(self, config: ExperimentConfig, out_dir: str | Path, resume: bool = False):
        config.validate()
        self.config = config
        self.out = Path(out_dir)
        self.resume = resume
        self.manifest: DatasetManifest | None = None
        self.groups: PeriodGroups | None = None
        self.projector: Projector | None = None
        self.status = "created"
        self.spot_corrections: dict[int, int] = {}

    # -- layout ------------------------------------------------------------

    def period_dir(self, period: int) -> Path:
        return self.out / f"period_{period}"

    def report_path(self, period: int) -> Path:
        return self.period_dir(period) / "report.json"

    def _provenance(self, operation: str, inputs: dict, outputs: dict) -> None:
        with (self.out / "provenance.jsonl").open("a") as fh:
            fh.write(
                json.dumps({"operation": operation, "inputs": inputs, "outputs": outputs}) + "\n"
            )

    def write_header(self) -> None:
        """Provenance header goes down before any computation."""
        self.out.mkdir(parents=True, exist_ok=True)
        save_config(self.config, self.out / "config.json")
        self._provenance(
            "run_header",
            inputs={"config": digest_json(config_to_dict(self.config))},
            outputs={"loopid_version": __version__, "seed": str(self.config.seed)},
        )

    # -- stages --------------------------------------------------------------

    def prepare_data(self) -> None:
        self.status = "generating"
        manifest_dir = self.out / "manifest"
        if self.resume and (manifest_dir / "header.json").exists():
            self.manifest = DatasetManifest.load(manifest_dir)
        else:
            self.manifest = generate_longtail_dataset(self.config.gen)
            self.manifest.save(manifest_dir)
            self._provenance(
                "generate_longtail_dataset",
                inputs={"gen": digest_json(vars(self.config.gen) | {"abundances": None})},
                outputs={"n_samples": str(len(self.manifest.samples))},
            )
        split = split_by_events(
            self.manifest,
            val_fraction=self.config.split.val_fraction,
            floor=self.config.split.floor,
            seed=self.config.split.seed,
            group1_period1_fraction=self.config.split.group1_period1_fraction,
        )
        self.groups = make_period_groups(self.manifest, split)
        self.projector = Projector.fit(self.groups.group1_train.features)

    def category_names(self) -> dict[int, str]:
        return {c.id: c.name for c in self.manifest.categories}

    def run_period1(self) -> tuple[PeriodState, ClassifierModel, EvaluationReport]:
        pdir = self.period_dir(1)
        if self.resume and self.report_path(1).exists():
            state = PeriodState.load(pdir / "state.json")
            model = load_model(pdir / "model.bin")
            report = EvaluationReport.load(self.report_path(1))
            return state, model, report

        self.status = "training"
        result = run_period1(
            self.groups,
            self.config.period1_train,
            self.config.period1_energy,
            arch=self.config.arch,
            calibration=self.config.calibration,
            category_names=self.category_names(),
        )
        pdir.mkdir(parents=True, exist_ok=True)
        save_model(result.model, pdir / "model.bin")
        save_model(result.supervised_model, pdir / "supervised_model.bin")
        result.state.save(pdir / "state.json")
        result.report.save(self.report_path(1))
        self._write_calibration(
            pdir, result.model, result.tau, self.config.period1_energy, result,
            self.groups.group1_val.features,
        )
        baseline = softmax_baseline_stats(
            result.supervised_model,
            self.groups.group1_val,
            self.groups.unknown_val,
            match_accuracy=result.report.high_conf_acc,
        )
        (pdir / "baseline_softmax.json").write_text(json.dumps(baseline, indent=2, sort_keys=True))
        self._provenance(
            "run_period1",
            inputs={"config": digest_json(config_to_dict(self.config))},
            outputs={"report": digest_json(result.report.to_dict()), "tau": f"{result.tau:.6f}"},
        )
        return result.state, result.model, result.report

    def _write_calibration(self, pdir: Path, model, tau, energy_cfg, result, val_features) -> None:
        from .energy import energy_score
        from .model import forward

        _, val_logits = forward(model, val_features)
        known_scores = -np.atleast_1d(energy_score(np.atleast_2d(val_logits), energy_cfg.temperature))
        _, unk_logits = forward(model, self.groups.unknown_val.features)
        unknown_scores = -np.atleast_1d(energy_score(np.atleast_2d(unk_logits), energy_cfg.temperature))
        write_calibration_report(
            pdir / "calibration.json",
            tau,
            energy_cfg,
            result.finetune_result.margin_known,
            result.finetune_result.margin_unknown,
            known_scores,
            unknown_scores,
        )

    def make_oracle(self) -> OracleLoopAnnotator:
        universe = [c.id for c in self.manifest.categories]
        return OracleLoopAnnotator(
            OracleAnnotator(
                truth=self.manifest.true_labels(),
                label_universe=universe,
                error_rate=self.config.annotator.error_rate,
                seed=self.config.annotator.seed,
            )
        )

    def run_period2(
        self,
        state: PeriodState,
        model: ClassifierModel,
        annotator: Annotator,
        on_annotation_phase=None,
    ) -> tuple[PeriodState, ClassifierModel, EvaluationReport]:
        period = state.period_index + 1
        pdir = self.period_dir(period)
        if self.resume and self.report_path(period).exists():
            return (
                PeriodState.load(pdir / "state.json"),
                load_model(pdir / "model.bin"),
                EvaluationReport.load(self.report_path(period)),
            )
        pdir.mkdir(parents=True, exist_ok=True)
        new_data = self.groups.group2_train

        records_path = pdir / "records.json"
        if self.resume and records_path.exists():
            blob = json.loads(records_path.read_text())
            high = [PredictionRecord.from_dict(r) for r in blob["high"]]
            low = [PredictionRecord.from_dict(r) for r in blob["low"]]
        else:
            high, low = infer_and_partition(model, new_data, state.tau, state.temperature, period)
            records_path.write_text(
                json.dumps(
                    {"high": [r.to_dict() for r in high], "low": [r.to_dict() for r in low]},
                    indent=2,
                    sort_keys=True,
                )
            )
            self._provenance(
                "infer_and_partition",
                inputs={"tau": f"{state.tau:.6f}"},
                outputs={"n_high": str(len(high)), "n_low": str(len(low))},
            )

        spot_batch = None
        if self.config.spotcheck_k > 0 and high:
            k = min(self.config.spotcheck_k, len(high))
            spot_batch = spot_check(high, k, seed=self.config.seed + 100 + period, batch_id=period)

        queue = AnnotationQueue(
            journal_path=pdir / "queue.jsonl",
            lease_seconds=self.config.annotator.lease_seconds,
        )
        queue.enqueue_low_confidence(low)
        self.status = "annotating"
        if on_annotation_phase is not None:
            on_annotation_phase(queue, spot_batch, state)
        annotator.obtain_labels(queue)
        if not queue.is_drained():
            raise ConfigurationError("annotation phase ended with unlabeled tasks")
        labels = queue.labels()
        human_labels = {r.sample_id: labels[r.sample_id] for r in low}
        source = getattr(annotator, "label_source", "human")
        for record in low:
            record.final_label = human_labels[record.sample_id]
            record.label_source = source
        if self.config.merge_spot_corrections and self.spot_corrections:
            human_labels.update(self.spot_corrections)

        self.status = "updating"
        result = finish_period(
            state,
            model,
            new_data,
            high,
            low,
            human_labels,
            PeriodNConfigs(
                update=self.config.update,
                energy=self.config.periodn_energy,
                calibration=self.config.calibration,
                category_names=self.category_names(),
            ),
            self.groups.group2_val,
            self.groups.unknown_train,
            self.groups.unknown_val,
        )

        if spot_batch is not None:
            if isinstance(annotator, OracleLoopAnnotator):
                oracle_spot_check(spot_batch, self.manifest.true_labels())
            payload = spot_batch.to_dict()
            if not spot_batch.pending_samples():
                payload["agreement_rate"] = spot_batch.agreement_rate()
                self.spot_corrections = spot_batch.corrections()
            (pdir / "spotcheck.json").write_text(json.dumps(payload, indent=2, sort_keys=True))

        save_model(result.model, pdir / "model.bin")
        result.state.save(pdir / "state.json")
        result.report.save(self.report_path(period))
        self._write_calibration(
            pdir, result.model, result.tau, self.config.periodn_energy, result,
            self.groups.group2_val.features,
        )
        self._provenance(
            "finish_period",
            inputs={"n_human": str(len(human_labels))},
            outputs={
                "report": digest_json(result.report.to_dict()),
                "novel": str(result.state.novel_count),
            },
        )
        return result.state, result.model, result.report

    def run(self, periods: int = 2, annotator: Annotator | None = None, on_annotation_phase=None) -> RunSummary:
        if periods < 1 or periods > 2:
            raise ConfigurationError(
                "the synthetic universe provides two collection pools; --periods must be 1 or 2"
            )
        self.write_header()
        self.prepare_data()
        summary = RunSummary(out_dir=self.out)
        state, model, report = self.run_period1()
        summary.states[1], summary.models[1], summary.reports[1] = state, model, report
        if periods >= 2:
            if annotator is None:
                annotator = self.make_oracle()
            state, model, report = self.run_period2(state, model, annotator, on_annotation_phase)
            summary.states[2], summary.models[2], summary.reports[2] = state, model, report
        self.status = "complete"
        return summary
