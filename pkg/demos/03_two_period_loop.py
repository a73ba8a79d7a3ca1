"""The whole loop at desk scale: period-1 training, period-2 scoring, oracle
annotation of the low-confidence slice, semi-supervised update with the class
memory, energy re-tuning, and the final report with per-category label
efficiency.

Run:  python3 demos/03_two_period_loop.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

from loopid.config import default_config
from loopid.metrics import render_text
from loopid.runner import ExperimentRunner

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="loopid_"))
print(f"writing artifacts to {out_dir}\n")

runner = ExperimentRunner(default_config(seed=0), out_dir)
summary = runner.run(periods=2)

for period, report in sorted(summary.reports.items()):
    print(render_text(report))

p2 = summary.reports[2]
print(f"human annotations were needed for {1 - p2.saved_effort:.1%} of the new data; "
      f"{p2.saved_effort:.1%} of the effort was saved by pseudo-labels.")
print(f"novel categories discovered in period 2: {summary.states[2].novel_count}")

known = set(summary.states[1].known_categories)
both = [s for s in p2.per_category if s.category_id in known]
avg_eff = sum(min(s.efficiency, 99.0) for s in both) / len(both)
print(f"mean label efficiency over categories known since period 1: {avg_eff:.1f}x "
      "(a fully annotated baseline is 1x at equal accuracy)")
print(f"\nartifacts: {out_dir}/period_1, {out_dir}/period_2 "
      "(reports, model snapshots, calibration, queue journal, provenance)")
