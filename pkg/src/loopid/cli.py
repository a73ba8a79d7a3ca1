"""Command-line entry point: generate data, run periods, serve annotation, render reports.

The ``run`` command executes the full multi-period experiment into an output
directory (immutable once complete; rerun with a fresh directory or
``--resume``). In human-annotation mode it hosts the HTTP service in-process
and blocks until the queue drains and an advance is requested.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .annotation import AnnotationQueue, OracleAnnotator, SpotCheckBatch
from .config import ExperimentConfig, default_config, load_config
from .datagen import DatasetManifest, GenConfig, gen_config_from_dict, generate_longtail_dataset
from .errors import AnnotationTimeoutError, ConfigurationError, LoopidError, ReportDecodeError
from .loop import PeriodState
from .metrics import EvaluationReport, render_csv, render_text
from .runner import ExperimentRunner
from .service import ServiceControl, ServiceHandle, create_app

STATIC_DIR = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist"


def _resolve_out(args) -> Path:
    out = os.environ.get("LOOPID_OUT") or args.out
    if not out:
        raise ConfigurationError("an output directory is required (--out or LOOPID_OUT)")
    return Path(out)


def _load_experiment_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = default_config(seed=getattr(args, "seed", 0) or 0)
    if getattr(args, "seed", None) is not None and not getattr(args, "config", None):
        cfg.seed = args.seed
    return cfg


class HumanLoopAnnotator:
    """Waits for console annotators to drain the queue and request an advance."""

    label_source = "human"

    def __init__(self, control: ServiceControl, timeout: float | None = None, poll: float = 0.2):
        self.control = control
        self.timeout = timeout
        self.poll = poll

    def obtain_labels(self, queue: AnnotationQueue) -> None:
        deadline = time.time() + self.timeout if self.timeout else None
        while True:
            if self.control.advance_requested.wait(self.poll):
                self.control.advance_requested.clear()
                if queue.is_drained():
                    return
            queue.expire_stale()
            if deadline is not None and time.time() > deadline:
                counts = queue.counts()
                raise AnnotationTimeoutError(
                    f"annotation wait timed out with {counts['pending'] + counts['claimed']} "
                    "tasks outstanding; state is checkpointed, rerun with --resume"
                )


def cmd_datagen(args) -> int:
    out = _resolve_out(args)
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        gen = gen_config_from_dict(raw["gen"]) if "gen" in raw else gen_config_from_dict(raw)
    else:
        gen = GenConfig()
    if args.seed is not None:
        from dataclasses import replace

        gen = replace(gen, seed=args.seed)
    manifest = generate_longtail_dataset(gen)
    manifest.save(out)
    counts = {c.novelty_tag.value: 0 for c in manifest.categories}
    for c in manifest.categories:
        counts[c.novelty_tag.value] += 1
    print(
        f"wrote manifest: {len(manifest.samples)} samples, {len(manifest.events)} events, "
        f"{len(manifest.categories)} categories {counts} -> {out}"
    )
    return 0


def cmd_run(args) -> int:
    out = _resolve_out(args)
    cfg = _load_experiment_config(args)
    mode = "oracle" if args.oracle else args.annotator or cfg.annotator.mode
    from dataclasses import replace as _replace

    cfg.annotator = _replace(
        cfg.annotator,
        mode=mode,
        error_rate=args.error_rate if args.error_rate is not None else cfg.annotator.error_rate,
        wait_timeout=args.timeout if args.timeout is not None else cfg.annotator.wait_timeout,
    )
    if args.bind:
        cfg.service = _replace(cfg.service, bind=args.bind)

    if out.exists() and any(out.iterdir()) and not args.resume:
        print(
            f"error: output directory {out} is not empty; completed runs are immutable "
            "(use a new directory or --resume)",
            file=sys.stderr,
        )
        return 1

    runner = ExperimentRunner(cfg, out, resume=args.resume)
    handle = None
    control = None
    try:
        if cfg.annotator.mode == "human" and args.periods >= 2:
            control = ServiceControl(token=cfg.service.token, reports_dir=out)
            app = create_app(control, static_dir=STATIC_DIR if STATIC_DIR.exists() else None)
            handle = ServiceHandle(app, cfg.service.host, cfg.service.port)
            handle.start()
            print(f"annotation service listening on http://{cfg.service.bind}")
            annotator = HumanLoopAnnotator(control, timeout=cfg.annotator.wait_timeout)

            def on_annotation_phase(queue, spot_batch, state):
                control.queue = queue
                control.spot_batch = spot_batch
                control.category_names = runner.category_names()
                control.known_categories = list(state.known_categories)
                control.feature_lookup = lambda sid: runner.manifest.sample(sid).features
                control.project = runner.projector.project if runner.projector else None
                control.n_new_data = len(runner.groups.group2_train)
                control.tau = state.tau
                control.temperature = state.temperature
                control.period = state.period_index + 1
                control.status = "annotating"
                counts = queue.counts()
                print(
                    f"waiting for human annotation: {counts['pending']} tasks pending; "
                    "label them in the console, then POST /api/periods/advance"
                )

            summary = runner.run(args.periods, annotator, on_annotation_phase)
            control.status = "complete"
        else:
            summary = runner.run(args.periods)
        for period, report in sorted(summary.reports.items()):
            print(f"period {period}: class_avg_acc={report.class_avg_acc:.4f} "
                  f"high_conf_ratio={report.high_conf_ratio:.4f} "
                  f"novel_detect_ratio={report.novel_detect_ratio:.4f}")
        print(f"artifacts in {out}")
        return 0
    except AnnotationTimeoutError as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return 3
    except LoopidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if handle is not None:
            if control is not None and control.status != "complete":
                control.status = "aborted"
            handle.stop()


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.json"
    try:
        report = EvaluationReport.load(path)
    except ReportDecodeError as exc:
        offset = f" (byte {exc.offset})" if exc.offset is not None else ""
        print(f"error: {exc}{offset}", file=sys.stderr)
        return 2
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    elif args.format == "csv":
        print(render_csv(report), end="")
    else:
        print(render_text(report), end="")
    return 0


def _annotate_remote(args, oracle: OracleAnnotator) -> int:
    import urllib.request

    base = args.url.rstrip("/")
    headers = {"Content-Type": "application/json", "X-Annotator-Id": oracle.annotator_id}
    if args.token:
        headers["X-Auth-Token"] = args.token

    def call(method: str, path: str, body: dict | None = None) -> dict:
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(base + path, data=data, headers=headers, method=method)
        with urllib.request.urlopen(req) as resp:
            return json.loads(resp.read())

    labeled = 0
    while True:
        batch = call("GET", f"/api/tasks?status=pending&limit={args.batch_size}")
        tasks = batch["tasks"]
        if not tasks:
            break
        for task in tasks:
            label = oracle.label_for(task["sample_id"])
            call("POST", f"/api/tasks/{task['task_id']}/label", {"category": label})
            labeled += 1
    print(f"labeled {labeled} tasks via {base}")
    if args.advance:
        result = call("POST", "/api/periods/advance")
        print(f"advance requested: {result.get('advanced')}")
    return 0


def cmd_annotate(args) -> int:
    run_dir = _resolve_out(args)
    manifest = DatasetManifest.load(run_dir / "manifest")
    oracle = OracleAnnotator(
        truth=manifest.true_labels(),
        label_universe=[c.id for c in manifest.categories],
        error_rate=args.error_rate,
        seed=args.seed,
    )
    if args.url:
        return _annotate_remote(args, oracle)
    journal = run_dir / f"period_{args.period}" / "queue.jsonl"
    if not journal.exists():
        print(f"error: no annotation queue at {journal}; run has not reached that phase", file=sys.stderr)
        return 1
    queue = AnnotationQueue(journal_path=journal)
    n = oracle.drain(queue)
    print(f"labeled {n} tasks in {journal}")
    return 0


def cmd_serve(args) -> int:
    run_dir = _resolve_out(args)
    manifest = DatasetManifest.load(run_dir / "manifest")
    period = args.period
    prev_state_path = run_dir / f"period_{period - 1}" / "state.json"
    state = PeriodState.load(prev_state_path) if prev_state_path.exists() else None
    journal = run_dir / f"period_{period}" / "queue.jsonl"
    control = ServiceControl(
        category_names={c.id: c.name for c in manifest.categories},
        known_categories=state.known_categories if state else [],
        feature_lookup=lambda sid: manifest.sample(sid).features,
        reports_dir=run_dir,
        tau=state.tau if state else 0.0,
        temperature=state.temperature if state else 1.0,
        period=period,
        token=args.token,
        queue=AnnotationQueue(journal_path=journal) if journal.exists() else None,
        status="annotating" if journal.exists() else "idle",
    )
    spot_path = run_dir / f"period_{period}" / "spotcheck.json"
    if spot_path.exists():
        blob = json.loads(spot_path.read_text())
        control.spot_batch = SpotCheckBatch(
            batch_id=blob["batch_id"],
            sample_ids=blob["sample_ids"],
            predictions={int(k): v for k, v in blob["predictions"].items()},
            seed=blob["seed"],
            verdicts={int(k): v for k, v in blob.get("verdicts", {}).items()},
        )
    host, port = args.bind.rsplit(":", 1)
    app = create_app(control, static_dir=STATIC_DIR if STATIC_DIR.exists() else None)
    handle = ServiceHandle(app, host, int(port))
    handle.start()
    print(f"serving run {run_dir} on http://{args.bind} (Ctrl-C to stop)")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loopid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic manifest")
    p.add_argument("--config", help="experiment config JSON (its gen section) or a bare gen config")
    p.add_argument("--out", help="output directory (or LOOPID_OUT)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("run", help="run the multi-period experiment")
    p.add_argument("--config", help="experiment config JSON; defaults mirror the published recipe")
    p.add_argument("--out", help="output directory (or LOOPID_OUT)")
    p.add_argument("--periods", type=int, default=2)
    p.add_argument("--oracle", action="store_true", help="use the simulated oracle annotator")
    p.add_argument("--annotator", choices=["oracle", "human"], default=None)
    p.add_argument("--error-rate", type=float, default=None, dest="error_rate")
    p.add_argument("--bind", help="host:port for the annotation service (human mode)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None, help="human annotation wait timeout (s)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a period report")
    p.add_argument("path", help="period directory or report.json")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("annotate", help="drain an annotation queue non-interactively")
    p.add_argument("--out", help="run directory (or LOOPID_OUT)")
    p.add_argument("--period", type=int, default=2)
    p.add_argument("--oracle", action="store_true", default=True)
    p.add_argument("--error-rate", type=float, default=0.0, dest="error_rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--url", help="annotate via a running service instead of the local journal")
    p.add_argument("--token", default=None)
    p.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p.add_argument("--advance", action="store_true", help="request period advance after draining")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("serve", help="host the annotation API for an existing run")
    p.add_argument("--out", help="run directory (or LOOPID_OUT)")
    p.add_argument("--period", type=int, default=2)
    p.add_argument("--bind", default="127.0.0.1:8321")
    p.add_argument("--token", default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LoopidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
