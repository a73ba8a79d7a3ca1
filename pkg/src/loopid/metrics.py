"""Evaluation quantities: class-average accuracy, confidence stats, novelty
detection, saved human effort, and per-category label efficiency.

Ratios are stored as fractions and only rendered as one-decimal percentages.
Every aggregate here is reproducible by a single integer recount over the
underlying records.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MetricError, ReportDecodeError

REPORT_SCHEMA_VERSION = 1


def class_average_accuracy(
    truths: np.ndarray, predictions: np.ndarray, categories: list[int]
) -> float:
    """Unweighted mean over ``categories`` of per-category accuracy."""
    truths = np.asarray(truths)
    predictions = np.asarray(predictions)
    if len(truths) != len(predictions):
        raise MetricError("truths and predictions must align")
    accs = []
    for cat in categories:
        mask = truths == cat
        if not mask.any():
            raise MetricError(f"category {cat} has no records to evaluate")
        accs.append(float((predictions[mask] == cat).mean()))
    return float(np.mean(accs))


def high_confidence_stats(confident: np.ndarray, correct: np.ndarray) -> tuple[float, float]:
    """(confident/total, correct-among-confident) from parallel flag arrays."""
    confident = np.asarray(confident, dtype=bool)
    correct = np.asarray(correct, dtype=bool)
    if confident.size == 0:
        raise MetricError("no records")
    ratio = float(confident.mean())
    n_conf = int(confident.sum())
    if n_conf == 0:
        raise MetricError("high-confidence accuracy undefined: zero confident records")
    accuracy = float(correct[confident].mean())
    return ratio, accuracy


def novel_detection_ratio(confident: np.ndarray) -> float:
    """Fraction of novel-category records flagged low-confidence."""
    confident = np.asarray(confident, dtype=bool)
    if confident.size == 0:
        raise MetricError("no novel records to score")
    return float((~confident).mean())


def saved_effort(n_low: int, n_total: int) -> float:
    if n_total <= 0:
        raise MetricError("saved effort undefined for empty inference set")
    return 1.0 - n_low / n_total


def label_efficiency(accuracy: float, n_used: int, n_full: int) -> float:
    """Validation accuracy divided by the fraction of full annotations consumed.

    Zero accuracy gives zero regardless of usage; positive accuracy with zero
    used annotations is unbounded and reported as +inf (callers flag it).
    """
    if n_full <= 0:
        raise MetricError("n_full_annotations must be > 0")
    if not (0 <= n_used <= n_full):
        raise MetricError(f"n_used={n_used} must be within [0, {n_full}]")
    if accuracy == 0.0:
        return 0.0
    if n_used == 0:
        return math.inf
    return accuracy / (n_used / n_full)


@dataclass(frozen=True)
class CategoryStats:
    category_id: int
    name: str
    n_val: int
    accuracy: float
    n_human_annotations: int
    n_full_annotations: int
    efficiency: float
    efficiency_unbounded: bool = False


@dataclass
class EvaluationReport:
    period: int
    class_avg_acc: float
    class_avg_acc_new_classes: float | None
    high_conf_ratio: float
    high_conf_acc: float
    novel_detect_ratio: float
    saved_effort: float | None
    per_category: list[CategoryStats] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name in ("class_avg_acc", "high_conf_ratio", "high_conf_acc", "novel_detect_ratio"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise MetricError(f"{name}={value} outside [0,1]")
        for stats in self.per_category:
            if not (0.0 <= stats.accuracy <= 1.0):
                raise MetricError(f"per-category accuracy {stats.accuracy} outside [0,1]")

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "period": self.period,
            "class_avg_acc": self.class_avg_acc,
            "class_avg_acc_new_classes": self.class_avg_acc_new_classes,
            "high_conf_ratio": self.high_conf_ratio,
            "high_conf_acc": self.high_conf_acc,
            "novel_detect_ratio": self.novel_detect_ratio,
            "saved_effort": self.saved_effort,
            "per_category": [
                {
                    "category_id": s.category_id,
                    "name": s.name,
                    "n_val": s.n_val,
                    "accuracy": s.accuracy,
                    "n_human_annotations": s.n_human_annotations,
                    "n_full_annotations": s.n_full_annotations,
                    "efficiency": "inf" if math.isinf(s.efficiency) else s.efficiency,
                    "efficiency_unbounded": s.efficiency_unbounded,
                }
                for s in self.per_category
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        per_category = [
            CategoryStats(
                category_id=s["category_id"],
                name=s["name"],
                n_val=s["n_val"],
                accuracy=s["accuracy"],
                n_human_annotations=s["n_human_annotations"],
                n_full_annotations=s["n_full_annotations"],
                efficiency=math.inf if s["efficiency"] == "inf" else s["efficiency"],
                efficiency_unbounded=s.get("efficiency_unbounded", False),
            )
            for s in data.get("per_category", [])
        ]
        return cls(
            period=data["period"],
            class_avg_acc=data["class_avg_acc"],
            class_avg_acc_new_classes=data["class_avg_acc_new_classes"],
            high_conf_ratio=data["high_conf_ratio"],
            high_conf_acc=data["high_conf_acc"],
            novel_detect_ratio=data["novel_detect_ratio"],
            saved_effort=data["saved_effort"],
            per_category=per_category,
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvaluationReport":
        p = Path(path)
        if not p.exists():
            raise ReportDecodeError(f"report not found: {p}", path=str(p))
        text = p.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ReportDecodeError(
                f"corrupt report {p}: {exc.msg} at byte {exc.pos}", path=str(p), offset=exc.pos
            ) from exc
        try:
            return cls.from_dict(data)
        except KeyError as exc:
            raise ReportDecodeError(f"report {p} missing field {exc}", path=str(p)) from exc


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def render_text(report: EvaluationReport) -> str:
    """Headline metrics plus the per-category table, percentages to one decimal."""
    out = io.StringIO()
    out.write(f"Period {report.period} evaluation\n")
    rows = [
        ("Class Avg. Acc. (%)", _pct(report.class_avg_acc)),
        ("High Conf. Ratio (%)", _pct(report.high_conf_ratio)),
        ("High Conf. Acc. (%)", _pct(report.high_conf_acc)),
        ("Novel Detect Ratio (%)", _pct(report.novel_detect_ratio)),
    ]
    if report.class_avg_acc_new_classes is not None:
        rows.append(("Class Avg. Acc. New Classes (%)", _pct(report.class_avg_acc_new_classes)))
    if report.saved_effort is not None:
        rows.append(("Saved Human Effort (%)", _pct(report.saved_effort)))
    width = max(len(r[0]) for r in rows)
    for name, value in rows:
        out.write(f"  {name:<{width}}  {value}\n")
    if report.per_category:
        out.write("\n  species              human ann.   acc (%)   efficiency\n")
        for s in report.per_category:
            eff = "inf" if math.isinf(s.efficiency) else f"{s.efficiency:.2f}"
            out.write(
                f"  {s.name:<20} {s.n_human_annotations:>10}   {100*s.accuracy:>7.1f}   {eff:>10}\n"
            )
    return out.getvalue()


def render_csv(report: EvaluationReport) -> str:
    """Per-category table: species and human-annotation count first."""
    lines = ["species,n_human_annotations,accuracy_pct,n_full_annotations,n_val,efficiency"]
    for s in report.per_category:
        eff = "inf" if math.isinf(s.efficiency) else f"{s.efficiency:.4f}"
        lines.append(
            f"{s.name},{s.n_human_annotations},{100*s.accuracy:.1f},"
            f"{s.n_full_annotations},{s.n_val},{eff}"
        )
    return "\n".join(lines) + "\n"
