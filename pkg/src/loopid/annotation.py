"""Annotation routing: a journaled task queue, a simulated oracle, and spot checks.

Low-confidence predictions become pending tasks; annotators claim them under a
lease and submit labels. All mutations are serialized through one lock and
appended to a write-ahead journal, so a crashed session resumes exactly where
it stopped. High-confidence predictions never enter the queue -- they are only
audited through the separate spot-check path.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import QueueError, TaskImmutableError

DEFAULT_LEASE_SECONDS = 600.0


class TaskStatus(str, Enum):
    PENDING = "pending"
    CLAIMED = "claimed"
    LABELED = "labeled"
    EXPIRED = "expired"


@dataclass
class AnnotationTask:
    task_id: int
    sample_id: int
    period: int
    feature_ref: str
    model_prediction: int
    energy: float
    status: TaskStatus = TaskStatus.PENDING
    assigned_label: int | None = None
    annotator_id: str | None = None
    created_at: float = 0.0
    labeled_at: float | None = None
    lease_expires_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "sample_id": self.sample_id,
            "period": self.period,
            "feature_ref": self.feature_ref,
            "model_prediction": self.model_prediction,
            "energy": self.energy,
            "status": self.status.value,
            "assigned_label": self.assigned_label,
            "annotator_id": self.annotator_id,
            "created_at": self.created_at,
            "labeled_at": self.labeled_at,
            "lease_expires_at": self.lease_expires_at,
        }


class AnnotationQueue:
    """Single-writer task queue with an append-only JSON-lines journal."""

    def __init__(
        self,
        journal_path: str | Path | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.time,
    ):
        self._lock = threading.Lock()
        self._tasks: dict[int, AnnotationTask] = {}
        self._by_sample: dict[int, int] = {}
        self._next_id = 0
        self.lease_seconds = lease_seconds
        self.clock = clock
        self.journal_path = Path(journal_path) if journal_path else None
        if self.journal_path and self.journal_path.exists():
            self._replay()

    # -- journal ---------------------------------------------------------

    def _append(self, record: dict) -> None:
        if self.journal_path is None:
            return
        with self.journal_path.open("a") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()

    def _replay(self) -> None:
        for line in self.journal_path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # torn tail write from a crash; everything before it is good
            self._apply(rec)

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "enqueue":
            t = rec["task"]
            task = AnnotationTask(
                task_id=t["task_id"],
                sample_id=t["sample_id"],
                period=t["period"],
                feature_ref=t["feature_ref"],
                model_prediction=t["model_prediction"],
                energy=t["energy"],
                created_at=t["created_at"],
            )
            self._tasks[task.task_id] = task
            self._by_sample[task.sample_id] = task.task_id
            self._next_id = max(self._next_id, task.task_id + 1)
        elif op == "claim":
            task = self._tasks[rec["task_id"]]
            task.status = TaskStatus.CLAIMED
            task.annotator_id = rec["annotator_id"]
            task.lease_expires_at = rec["lease_expires_at"]
        elif op == "release":
            task = self._tasks[rec["task_id"]]
            task.status = TaskStatus.PENDING
            task.annotator_id = None
            task.lease_expires_at = None
        elif op == "label":
            task = self._tasks[rec["task_id"]]
            task.status = TaskStatus.LABELED
            task.assigned_label = rec["category"]
            task.annotator_id = rec.get("annotator_id")
            task.labeled_at = rec.get("labeled_at")
            task.lease_expires_at = None

    # -- mutations -------------------------------------------------------

    def enqueue_low_confidence(self, records: Iterable) -> list[AnnotationTask]:
        """One pending task per low-confidence record, idempotent on sample_id.

        Records must carry sample_id / confident / predicted_category / energy
        (and optionally period). Confident records are rejected by name.
        """
        out = []
        with self._lock:
            for rec in records:
                if getattr(rec, "confident", False):
                    raise QueueError(
                        f"sample {rec.sample_id} is high-confidence; it does not "
                        "belong in the annotation queue"
                    )
                existing = self._by_sample.get(rec.sample_id)
                if existing is not None:
                    out.append(self._tasks[existing])
                    continue
                task = AnnotationTask(
                    task_id=self._next_id,
                    sample_id=rec.sample_id,
                    period=getattr(rec, "period", 0),
                    feature_ref=f"sample:{rec.sample_id}",
                    model_prediction=rec.predicted_category,
                    energy=rec.energy,
                    created_at=self.clock(),
                )
                self._next_id += 1
                self._tasks[task.task_id] = task
                self._by_sample[task.sample_id] = task.task_id
                self._append({"op": "enqueue", "task": task.to_dict()})
                out.append(task)
        return out

    def claim(self, limit: int, annotator_id: str) -> list[AnnotationTask]:
        """Move up to ``limit`` pending tasks to claimed under a fresh lease."""
        now = self.clock()
        out = []
        with self._lock:
            self._expire_stale_locked(now)
            for task in sorted(self._tasks.values(), key=lambda t: t.task_id):
                if len(out) >= limit:
                    break
                if task.status is not TaskStatus.PENDING:
                    continue
                task.status = TaskStatus.CLAIMED
                task.annotator_id = annotator_id
                task.lease_expires_at = now + self.lease_seconds
                self._append(
                    {
                        "op": "claim",
                        "task_id": task.task_id,
                        "annotator_id": annotator_id,
                        "lease_expires_at": task.lease_expires_at,
                    }
                )
                out.append(task)
        return out

    def submit_label(self, task_id: int, category: int, annotator_id: str | None = None) -> AnnotationTask:
        """Label a task. Re-submitting the same label is a no-op; a different one errors."""
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise QueueError(f"unknown task {task_id}")
            if task.status is TaskStatus.LABELED:
                if task.assigned_label == category:
                    return task  # at-least-once delivery; idempotent
                raise TaskImmutableError(
                    f"task {task_id} already labeled {task.assigned_label}; "
                    f"refusing relabel to {category}"
                )
            task.status = TaskStatus.LABELED
            task.assigned_label = int(category)
            task.annotator_id = annotator_id or task.annotator_id
            task.labeled_at = self.clock()
            task.lease_expires_at = None
            self._append(
                {
                    "op": "label",
                    "task_id": task_id,
                    "category": int(category),
                    "annotator_id": task.annotator_id,
                    "labeled_at": task.labeled_at,
                }
            )
            return task

    def expire_stale(self, now: float | None = None) -> int:
        with self._lock:
            return self._expire_stale_locked(self.clock() if now is None else now)

    def _expire_stale_locked(self, now: float) -> int:
        released = 0
        for task in self._tasks.values():
            if task.status is TaskStatus.CLAIMED and task.lease_expires_at is not None:
                if task.lease_expires_at < now:
                    task.status = TaskStatus.PENDING
                    task.annotator_id = None
                    task.lease_expires_at = None
                    self._append({"op": "release", "task_id": task.task_id})
                    released += 1
        return released

    # -- views -----------------------------------------------------------

    def get(self, task_id: int) -> AnnotationTask:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise QueueError(f"unknown task {task_id}")
            return task

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {status.value: 0 for status in TaskStatus}
            for task in self._tasks.values():
                out[task.status.value] += 1
            out["total"] = len(self._tasks)
            return out

    def is_drained(self) -> bool:
        counts = self.counts()
        return counts["pending"] == 0 and counts["claimed"] == 0

    def tasks(self, status: TaskStatus | None = None) -> list[AnnotationTask]:
        with self._lock:
            out = [
                t
                for t in self._tasks.values()
                if status is None or t.status is status
            ]
        return sorted(out, key=lambda t: t.task_id)

    def labels(self) -> dict[int, int]:
        """sample_id -> assigned category over labeled tasks."""
        with self._lock:
            return {
                t.sample_id: t.assigned_label
                for t in self._tasks.values()
                if t.status is TaskStatus.LABELED
            }


@dataclass
class OracleAnnotator:
    """Simulated human with ground-truth access and a configurable error rate.

    With probability ``error_rate`` the assigned label is swapped for a
    different category drawn from the label universe.
    """

    truth: dict[int, int]
    label_universe: list[int]
    error_rate: float = 0.0
    seed: int = 0
    annotator_id: str = "oracle"

    def __post_init__(self) -> None:
        if not (0.0 <= self.error_rate < 1.0):
            raise QueueError(f"error_rate must be in [0,1), got {self.error_rate}")
        self._rng = np.random.default_rng(self.seed)

    def label_for(self, sample_id: int) -> int:
        true_label = self.truth[sample_id]
        if self.error_rate > 0.0 and self._rng.random() < self.error_rate:
            others = [c for c in self.label_universe if c != true_label]
            if others:
                return int(others[self._rng.integers(len(others))])
        return int(true_label)

    def annotate(self, queue: AnnotationQueue, task: AnnotationTask) -> AnnotationTask:
        if task.status is TaskStatus.LABELED:
            raise TaskImmutableError(f"task {task.task_id} already labeled")
        return queue.submit_label(task.task_id, self.label_for(task.sample_id), self.annotator_id)

    def drain(self, queue: AnnotationQueue, batch_size: int = 64) -> int:
        """Claim and label everything outstanding; returns labels submitted."""
        n = 0
        while True:
            batch = queue.claim(batch_size, self.annotator_id)
            if not batch:
                break
            for task in batch:
                self.annotate(queue, task)
                n += 1
        return n


@dataclass
class SpotCheckBatch:
    """Random audit of high-confidence predictions by an expert."""

    batch_id: int
    sample_ids: list[int]
    predictions: dict[int, int]
    seed: int
    verdicts: dict[int, dict] = field(default_factory=dict)

    def record_verdict(self, sample_id: int, agree: bool, corrected_label: int | None = None) -> None:
        if sample_id not in self.predictions:
            raise QueueError(f"sample {sample_id} is not part of this spot-check batch")
        if not agree and corrected_label is None:
            raise QueueError("disagreement requires a corrected label")
        self.verdicts[sample_id] = {"agree": bool(agree), "corrected_label": corrected_label}

    def pending_samples(self) -> list[int]:
        return [sid for sid in self.sample_ids if sid not in self.verdicts]

    def agreement_rate(self) -> float:
        if len(self.verdicts) < len(self.sample_ids):
            raise QueueError(
                f"spot check incomplete: {len(self.verdicts)}/{len(self.sample_ids)} verdicts in"
            )
        if not self.sample_ids:
            raise QueueError("empty spot-check batch")
        agree = sum(1 for v in self.verdicts.values() if v["agree"])
        return agree / len(self.sample_ids)

    def corrections(self) -> dict[int, int]:
        return {
            sid: v["corrected_label"]
            for sid, v in self.verdicts.items()
            if not v["agree"]
        }

    def to_dict(self) -> dict:
        return {
            "batch_id": self.batch_id,
            "sample_ids": self.sample_ids,
            "predictions": {str(k): v for k, v in self.predictions.items()},
            "seed": self.seed,
            "verdicts": {str(k): v for k, v in self.verdicts.items()},
        }


def spot_check(high_records: list, k: int, seed: int, batch_id: int = 0) -> SpotCheckBatch:
    """Uniform draw without replacement of ``k`` high-confidence predictions."""
    if k > len(high_records):
        raise QueueError(f"cannot draw {k} from {len(high_records)} high-confidence records")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(high_records), size=k, replace=False)
    chosen = [high_records[int(i)] for i in sorted(idx)]
    return SpotCheckBatch(
        batch_id=batch_id,
        sample_ids=[r.sample_id for r in chosen],
        predictions={r.sample_id: r.predicted_category for r in chosen},
        seed=seed,
    )


def oracle_spot_check(batch: SpotCheckBatch, truth: dict[int, int]) -> float:
    """Fill all verdicts from ground truth and return the agreement rate."""
    for sid in batch.sample_ids:
        predicted = batch.predictions[sid]
        actual = truth[sid]
        batch.record_verdict(sid, agree=predicted == actual, corrected_label=None if predicted == actual else actual)
    return batch.agreement_rate()
