"""Phase 2: adapt to an unlabeled target domain, end to end.

The runner trains the source model, measures the source-only baseline on
the target set, then adapts: entropy alignment, ensemble negative
learning on complementary label sets, confidence filtering, and the two
class-geometry terms. The summary compares baseline and adapted
accuracy plus the negative-transfer fraction (samples predicted into
source-private classes).
"""

import json
import math
from pathlib import Path

from protoadapt import load_config, run_experiment

config = {
    "seed": 0,
    "out_dir": "runs/demo",
    "data": {"synthetic": {"k_s": 8, "k_t": 4, "d_x": 10,
                           "source_per_class": 200, "target_per_class": 100,
                           "cluster_std": 1.0,
                           "rotation_angle": math.pi / 6,
                           "translation": [1.0 / math.sqrt(10)] * 10}},
    "model": {"hidden": [64, 64], "d_z": 32},
    "source": {"eta": 1.5, "epochs": 100, "lr0": 0.01, "batch_size": 32},
    "adapt": {"n_a": 10, "n_e": 3, "n_cl": 2, "alpha": 0.5, "beta": 1.5,
              "epochs": 60, "warmup_epochs": 5, "switch_epoch": 15,
              "lr0": 0.01, "batch_size": 32},
}
Path("runs").mkdir(exist_ok=True)
Path("runs/demo.json").write_text(json.dumps(config, indent=2))

summary = run_experiment(load_config("runs/demo.json"))

b, a = summary["baseline"], summary["adapted"]
print(f"baseline (source-only) accuracy: {b['accuracy']:.4f}   "
      f"negative transfer: {b['negative_transfer']:.4f}")
print(f"adapted accuracy:                {a['accuracy']:.4f}   "
      f"negative transfer: {a['negative_transfer']:.4f}")
print("\nper-class accuracy after adaptation:")
for c, acc in a["per_class"].items():
    print(f"  class {c}: {acc:.4f}")
print("\nartifacts in runs/demo/: metric CSVs, checkpoints, summary.json")
print("rerunning with the same seed reproduces them byte for byte")
