"""Free-energy confidence from first principles: score logits, fine-tune the
margin loss against a left-out pool, and compare against softmax confidence
for spotting never-seen categories.

Run:  python3 demos/02_energy_confidence.py
"""
import numpy as np

from loopid import datagen
from loopid.config import default_config
from loopid.energy import calibrate_threshold, energy_score, softmax_confidence
from loopid.loop import as_labeled, run_period1, softmax_baseline_stats
from loopid.model import forward

# The score itself: E(x) = -T * log(sum_i exp(logit_i / T)). Lower energy
# means "looks like training data"; -E(x) is the confidence score.
print("energy of [0, 0] at T=1:", energy_score(np.array([0.0, 0.0]), 1.0))
print("energy of [1, 0] at T=1:", energy_score(np.array([1.0, 0.0]), 1.0))
print("energy of [1000, 0]    :", energy_score(np.array([1000.0, 0.0]), 1.0), "(no overflow)")
print("softmax confidence of [1, 0]:", softmax_confidence(np.array([1.0, 0.0])))

# Train the first-period model, then fine-tune with the margin loss that
# pushes known-sample energies below one margin and left-out-sample energies
# above another.
cfg = default_config(seed=0)
manifest = datagen.generate_longtail_dataset(cfg.gen)
split = datagen.split_by_events(manifest, seed=cfg.split.seed)
groups = datagen.make_period_groups(manifest, split)
print("\ntraining period-1 model (supervised + energy fine-tune)...")
p1 = run_period1(groups, cfg.period1_train, cfg.period1_energy, arch=cfg.arch)

report = p1.report
print(f"margins anchored at known-energy percentiles: "
      f"m_known={p1.finetune_result.margin_known:.2f}, "
      f"m_unknown={p1.finetune_result.margin_unknown:.2f}")
print(f"calibrated tau={p1.tau:.2f}")


def mean_energy(model, features):
    _, logits = forward(model, features)
    return float(np.mean(energy_score(logits, cfg.period1_energy.temperature)))


for label, model in (("before fine-tune", p1.supervised_model), ("after fine-tune", p1.model)):
    gap = mean_energy(model, groups.unknown_val.features) - mean_energy(model, groups.group1_val.features)
    print(f"{label}: mean energy gap (unknown - known) = {gap:.2f}")

print(f"\nvalidation class-average accuracy: {report.class_avg_acc:.1%}")
print(f"high-confidence ratio {report.high_conf_ratio:.1%} at accuracy {report.high_conf_acc:.1%}")
print(f"novel-detection ratio (energy): {report.novel_detect_ratio:.1%}")

baseline = softmax_baseline_stats(
    p1.supervised_model, groups.group1_val, groups.unknown_val,
    match_accuracy=report.high_conf_acc,
)
print(f"novel-detection ratio (softmax at matched accuracy "
      f"{baseline['high_conf_acc']:.1%}): {baseline['novel_detect_ratio']:.1%}")
