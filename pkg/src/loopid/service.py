"""HTTP JSON API for the annotation console and scripted annotators.

The API is a thin shell over the annotation queue and the current period's
artifacts: claim task batches, post labels, audit spot-check items, watch
queue counts, and trigger the period advance once everything is labeled.
Every response carries a schema_version field.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import uvicorn
from fastapi import Depends, FastAPI, Header, HTTPException, Query
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation import AnnotationQueue, AnnotationTask, SpotCheckBatch, TaskStatus
from .errors import QueueError, TaskImmutableError

API_SCHEMA_VERSION = 1


@dataclass
class ServiceControl:
    """Mutable bridge between the orchestrator and the HTTP handlers."""

    category_names: dict[int, str] = field(default_factory=dict)
    known_categories: list[int] = field(default_factory=list)
    feature_lookup: Callable[[int], np.ndarray] | None = None
    project: Callable[[np.ndarray], np.ndarray] | None = None
    reports_dir: Path | None = None
    tau: float = 0.0
    temperature: float = 1.0
    period: int = 0
    n_new_data: int = 0
    status: str = "idle"
    token: str | None = None
    queue: AnnotationQueue | None = None
    spot_batch: SpotCheckBatch | None = None
    advance_requested: threading.Event = field(default_factory=threading.Event)

    def novel_discovered(self) -> int:
        if self.queue is None:
            return 0
        known = set(self.known_categories)
        labels = set(self.queue.labels().values())
        return len(labels - known)


class LabelBody(BaseModel):
    category: int


class VerdictBody(BaseModel):
    agree: bool
    corrected_label: int | None = None


def _task_payload(control: ServiceControl, task: AnnotationTask) -> dict:
    features = None
    projection = None
    if control.feature_lookup is not None:
        vec = control.feature_lookup(task.sample_id)
        features = [float(v) for v in vec]
        if control.project is not None:
            xy = control.project(vec)[0]
            projection = [float(xy[0]), float(xy[1])]
    return {
        "task_id": task.task_id,
        "sample_id": task.sample_id,
        "period": task.period,
        "status": task.status.value,
        "model_prediction": {
            "category_id": task.model_prediction,
            "name": control.category_names.get(task.model_prediction, f"category_{task.model_prediction}"),
        },
        "energy": task.energy,
        "neg_energy": -task.energy,
        "tau": control.tau,
        "features": features,
        "projection": projection,
        "assigned_label": task.assigned_label,
        "lease_expires_at": task.lease_expires_at,
    }


def create_app(control: ServiceControl, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="loopid annotation service")

    def check_token(x_auth_token: str | None = Header(default=None)) -> None:
        if control.token is not None and x_auth_token != control.token:
            raise HTTPException(status_code=401, detail="missing or invalid token")

    def need_queue() -> AnnotationQueue:
        if control.queue is None:
            raise HTTPException(status_code=409, detail="no annotation phase is active")
        return control.queue

    @app.exception_handler(TaskImmutableError)
    async def immutable_handler(_, exc: TaskImmutableError):
        return JSONResponse(status_code=409, content={"schema_version": API_SCHEMA_VERSION, "detail": str(exc)})

    @app.exception_handler(QueueError)
    async def queue_handler(_, exc: QueueError):
        return JSONResponse(status_code=400, content={"schema_version": API_SCHEMA_VERSION, "detail": str(exc)})

    @app.exception_handler(HTTPException)
    async def http_handler(_, exc: HTTPException):
        # Error responses carry the schema version too.
        return JSONResponse(
            status_code=exc.status_code,
            content={"schema_version": API_SCHEMA_VERSION, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(_, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"schema_version": API_SCHEMA_VERSION, "detail": str(exc.errors())},
        )

    @app.get("/api/tasks", dependencies=[Depends(check_token)])
    def get_tasks(
        status: str = Query(default="pending"),
        limit: int = Query(default=8, ge=1, le=256),
        x_annotator_id: str | None = Header(default=None),
    ):
        queue = need_queue()
        if status == "pending":
            tasks = queue.claim(limit, x_annotator_id or "console")
        else:
            try:
                wanted = TaskStatus(status)
            except ValueError:
                raise HTTPException(status_code=422, detail=f"unknown status {status!r}")
            tasks = queue.tasks(wanted)[:limit]
        return {
            "schema_version": API_SCHEMA_VERSION,
            "tasks": [_task_payload(control, t) for t in tasks],
        }

    @app.post("/api/tasks/{task_id}/label", dependencies=[Depends(check_token)])
    def post_label(task_id: int, body: LabelBody, x_annotator_id: str | None = Header(default=None)):
        queue = need_queue()
        try:
            task = queue.submit_label(task_id, body.category, x_annotator_id or "console")
        except TaskImmutableError:
            raise
        except QueueError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"schema_version": API_SCHEMA_VERSION, "task": _task_payload(control, task)}

    @app.get("/api/periods/current", dependencies=[Depends(check_token)])
    def current_period():
        counts = control.queue.counts() if control.queue is not None else {
            s.value: 0 for s in TaskStatus
        } | {"total": 0}
        saved = None
        if control.n_new_data > 0:
            saved = 1.0 - counts["total"] / control.n_new_data
        return {
            "schema_version": API_SCHEMA_VERSION,
            "period": control.period,
            "status": control.status,
            "tau": control.tau,
            "temperature": control.temperature,
            "counts": counts,
            "n_new_data": control.n_new_data,
            "saved_effort": saved,
            "novel_discovered": control.novel_discovered(),
            "known_categories": [
                {"id": cid, "name": control.category_names.get(cid, f"category_{cid}")}
                for cid in control.known_categories
            ],
        }

    @app.post("/api/periods/advance", dependencies=[Depends(check_token)])
    def advance():
        queue = need_queue()
        counts = queue.counts()
        outstanding = counts["pending"] + counts["claimed"]
        if outstanding > 0:
            raise HTTPException(
                status_code=409,
                detail=f"{outstanding} tasks still outstanding; label them before advancing",
            )
        control.advance_requested.set()
        return {"schema_version": API_SCHEMA_VERSION, "advanced": True}

    @app.get("/api/spotcheck/next", dependencies=[Depends(check_token)])
    def spotcheck_next():
        batch = control.spot_batch
        if batch is None:
            return {"schema_version": API_SCHEMA_VERSION, "done": True, "item": None}
        pending = batch.pending_samples()
        if not pending:
            return {
                "schema_version": API_SCHEMA_VERSION,
                "done": True,
                "item": None,
                "agreement_rate": batch.agreement_rate(),
            }
        sid = pending[0]
        features = projection = None
        if control.feature_lookup is not None:
            vec = control.feature_lookup(sid)
            features = [float(v) for v in vec]
            if control.project is not None:
                xy = control.project(vec)[0]
                projection = [float(xy[0]), float(xy[1])]
        pred = batch.predictions[sid]
        return {
            "schema_version": API_SCHEMA_VERSION,
            "done": False,
            "item": {
                "sample_id": sid,
                "prediction": {
                    "category_id": pred,
                    "name": control.category_names.get(pred, f"category_{pred}"),
                },
                "features": features,
                "projection": projection,
                "remaining": len(pending),
            },
        }

    @app.post("/api/spotcheck/{sample_id}/verdict", dependencies=[Depends(check_token)])
    def spotcheck_verdict(sample_id: int, body: VerdictBody):
        batch = control.spot_batch
        if batch is None:
            raise HTTPException(status_code=409, detail="no spot-check batch is active")
        batch.record_verdict(sample_id, body.agree, body.corrected_label)
        done = not batch.pending_samples()
        return {
            "schema_version": API_SCHEMA_VERSION,
            "recorded": True,
            "done": done,
            "agreement_rate": batch.agreement_rate() if done else None,
        }

    @app.get("/api/reports/{period}", dependencies=[Depends(check_token)])
    def get_report(period: int):
        if control.reports_dir is None:
            raise HTTPException(status_code=404, detail="no reports directory configured")
        path = Path(control.reports_dir) / f"period_{period}" / "report.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"no report for period {period}")
        import json

        data = json.loads(path.read_text())
        data["schema_version"] = data.get("schema_version", API_SCHEMA_VERSION)
        return data

    if static_dir is not None and Path(static_dir).exists():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app


class ServiceHandle:
    """Uvicorn server running in a daemon thread with a clean stop."""

    def __init__(self, app: FastAPI, host: str, port: int):
        config = uvicorn.Config(app, host=host, port=port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def start(self, timeout: float = 10.0) -> None:
        self.thread.start()
        import time

        deadline = time.time() + timeout
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("annotation service failed to start")
            if not self.thread.is_alive():
                raise RuntimeError("annotation service thread died during startup")
            time.sleep(0.02)

    def stop(self, timeout: float = 10.0) -> None:
        self.server.should_exit = True
        self.thread.join(timeout)
