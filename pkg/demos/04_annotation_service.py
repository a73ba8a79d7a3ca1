"""Drive the annotation HTTP API the way the web console does: run a period-2
experiment in a background thread, claim low-confidence tasks over HTTP,
submit labels, watch the dashboard numbers move, and trigger the advance.

Run:  python3 demos/04_annotation_service.py
"""
import json
import socket
import tempfile
import threading
import time
import urllib.request
from pathlib import Path

from loopid.cli import main
from loopid.config import save_config, small_config

with socket.socket() as s:
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
base = f"http://127.0.0.1:{port}"

out = Path(tempfile.mkdtemp(prefix="loopid_svc_"))
cfg_path = out / "config.json"
save_config(small_config(seed=5), cfg_path)


def call(method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data,
                                 headers={"Content-Type": "application/json"}, method=method)
    with urllib.request.urlopen(req, timeout=5) as resp:
        return json.loads(resp.read())


run_dir = out / "run"
runner = threading.Thread(
    target=main,
    args=(["run", "--config", str(cfg_path), "--out", str(run_dir), "--periods", "2",
           "--annotator", "human", "--bind", f"127.0.0.1:{port}", "--timeout", "120"],),
    daemon=True,
)
runner.start()

print("waiting for the run to reach the annotation phase...")
while True:
    time.sleep(0.2)
    try:
        current = call("GET", "/api/periods/current")
        if current["counts"]["pending"] > 0:
            break
    except Exception:
        continue

print(f"dashboard: period {current['period']}, tau={current['tau']:.2f}, "
      f"{current['counts']['pending']} tasks pending, "
      f"saved effort so far {current['saved_effort']:.1%}")

truth = {}
for line in (run_dir / "manifest" / "samples.jsonl").read_text().splitlines():
    rec = json.loads(line)
    truth[rec["sample_id"]] = rec["category_id"]

labeled = 0
while True:
    batch = call("GET", "/api/tasks?status=pending&limit=8")
    if not batch["tasks"]:
        break
    for task in batch["tasks"]:
        # What the console shows per task: the model's guess, its energy
        # against tau, and a 2-D projection of the feature vector.
        if labeled == 0:
            print(f"\nfirst task: prediction={task['model_prediction']['name']} "
                  f"-E(x)={task['neg_energy']:.2f} vs tau={task['tau']:.2f} "
                  f"projection={[round(v, 2) for v in task['projection']]}")
        call("POST", f"/api/tasks/{task['task_id']}/label",
             {"category": truth[task["sample_id"]]})
        labeled += 1

print(f"labeled {labeled} tasks; requesting the period advance")
print("advance:", call("POST", "/api/periods/advance"))

runner.join(timeout=300)
report = call("GET", "/api/reports/2") if runner.is_alive() else json.loads(
    (run_dir / "period_2" / "report.json").read_text()
)
print(f"period-2 class-average accuracy: {report['class_avg_acc']:.1%}, "
      f"saved effort {report['saved_effort']:.1%}")
print(f"artifacts in {run_dir}")
