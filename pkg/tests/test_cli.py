from __future__ import annotations

import json
import socket
import threading
import time
import urllib.request
from pathlib import Path

import pytest

from loopid.cli import main
from loopid.config import (
    config_from_dict,
    config_to_dict,
    default_config,
    save_config,
    small_config,
)
from loopid.datagen import DatasetManifest


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    save_config(small_config(seed=5), path)
    return str(path)


@pytest.fixture(scope="module")
def oracle_run(cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "oracle"
    rc = main(["run", "--config", cfg_path, "--out", str(out), "--periods", "2", "--oracle"])
    assert rc == 0
    return out


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_config_roundtrip_identity():
    cfg = default_config(seed=9)
    blob = config_to_dict(cfg)
    again = config_to_dict(config_from_dict(blob))
    assert blob == again


def test_datagen_writes_manifest(tmp_path, cfg_path):
    out = tmp_path / "manifest"
    rc = main(["datagen", "--config", cfg_path, "--out", str(out)])
    assert rc == 0
    manifest = DatasetManifest.load(out)
    assert len(manifest.samples) > 0


def test_loopid_out_env_override(tmp_path, cfg_path, monkeypatch):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("LOOPID_OUT", str(env_dir))
    rc = main(["datagen", "--config", cfg_path, "--out", str(tmp_path / "ignored")])
    assert rc == 0
    assert (env_dir / "header.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_run_produces_reports_and_provenance(oracle_run):
    assert (oracle_run / "period_1" / "report.json").exists()
    assert (oracle_run / "period_2" / "report.json").exists()
    assert (oracle_run / "config.json").exists()
    lines = (oracle_run / "provenance.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["operation"] == "run_header"
    assert "config" in header["inputs"]


def test_run_refuses_nonempty_dir(oracle_run, cfg_path):
    rc = main(["run", "--config", cfg_path, "--out", str(oracle_run), "--periods", "1"])
    assert rc == 1


def test_run_determinism_byte_identical(cfg_path, tmp_path, oracle_run):
    out2 = tmp_path / "again"
    rc = main(["run", "--config", cfg_path, "--out", str(out2), "--periods", "2", "--oracle"])
    assert rc == 0
    for period in (1, 2):
        a = (oracle_run / f"period_{period}" / "report.json").read_bytes()
        b = (out2 / f"period_{period}" / "report.json").read_bytes()
        assert a == b


def test_report_formats(oracle_run, capsys):
    assert main(["report", str(oracle_run / "period_2")]) == 0
    text = capsys.readouterr().out
    assert "Class Avg. Acc." in text

    assert main(["report", str(oracle_run / "period_2"), "--format", "csv"]) == 0
    csv = capsys.readouterr().out
    assert csv.splitlines()[0].startswith("species,n_human_annotations,accuracy_pct")

    assert main(["report", str(oracle_run / "period_2"), "--format", "json"]) == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["period"] == 2


def test_report_corrupt_file(tmp_path, capsys):
    bad = tmp_path / "report.json"
    bad.write_text('{"period": 2, "class_avg')
    rc = main(["report", str(bad)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "byte" in err


def test_periods_out_of_range(cfg_path, tmp_path):
    rc = main(["run", "--config", cfg_path, "--out", str(tmp_path / "p3"), "--periods", "3"])
    assert rc == 1


def drive_queue(base: str, run_dir: Path, n_labels: int | None = None, advance: bool = True):
    """Scripted console client: claim, label with truth, then advance."""

    def call(method, path, body=None):
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(base + path, data=data,
                                     headers={"Content-Type": "application/json"},
                                     method=method)
        with urllib.request.urlopen(req, timeout=5) as resp:
            return json.loads(resp.read())

    for _ in range(300):
        time.sleep(0.05)
        try:
            if call("GET", "/api/periods/current")["counts"]["pending"] > 0:
                break
        except Exception:
            continue
    truth = {}
    for line in (run_dir / "manifest" / "samples.jsonl").read_text().splitlines():
        rec = json.loads(line)
        truth[rec["sample_id"]] = rec["category_id"]
    labeled = 0
    while n_labels is None or labeled < n_labels:
        batch = call("GET", "/api/tasks?status=pending&limit=8")
        if not batch["tasks"]:
            break
        for task in batch["tasks"]:
            call("POST", f"/api/tasks/{task['task_id']}/label",
                 {"category": truth[task["sample_id"]]})
            labeled += 1
    if advance:
        call("POST", "/api/periods/advance")
    return labeled


def test_human_mode_end_to_end(cfg_path, tmp_path, oracle_run):
    port = free_port()
    out = tmp_path / "human"
    result = {}

    def client():
        result["labeled"] = drive_queue(f"http://127.0.0.1:{port}", out)

    thread = threading.Thread(target=client, daemon=True)
    thread.start()
    rc = main(["run", "--config", cfg_path, "--out", str(out), "--periods", "2",
               "--annotator", "human", "--bind", f"127.0.0.1:{port}", "--timeout", "120"])
    thread.join(30)
    assert rc == 0
    assert result["labeled"] > 0
    # human labels equal oracle truth, so reports must match the oracle run
    a = (oracle_run / "period_2" / "report.json").read_bytes()
    b = (out / "period_2" / "report.json").read_bytes()
    assert a == b


def test_timeout_checkpoint_annotate_resume(cfg_path, tmp_path):
    port = free_port()
    out = tmp_path / "resumable"
    rc = main(["run", "--config", cfg_path, "--out", str(out), "--periods", "2",
               "--annotator", "human", "--bind", f"127.0.0.1:{port}", "--timeout", "1.0"])
    assert rc == 3  # timed out waiting for annotation; checkpoint retained
    assert (out / "period_2" / "queue.jsonl").exists()
    assert not (out / "period_2" / "report.json").exists()

    rc = main(["annotate", "--out", str(out), "--period", "2", "--oracle"])
    assert rc == 0

    rc = main(["run", "--config", cfg_path, "--out", str(out), "--periods", "2",
               "--oracle", "--resume"])
    assert rc == 0
    assert (out / "period_2" / "report.json").exists()
