"""
A short continual sequence
==========================

Pretrain a small backbone on one synthetic domain, freeze it, then learn one
prototype set per new domain. The log a[j][k] holds the error on dataset j
after training through dataset k. With known domain identity the earlier rows
never change; with identity withheld the sets are picked by descriptor routing.

Step counts here are cut down so the script finishes in about a minute; pass
a larger number as the first argument for a closer look (400/300 is the
default experiment config).
"""

import sys
import tempfile
from pathlib import Path

from protoadapt.config import ExperimentConfig
from protoadapt.harness import run_sequence

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 40
root = Path(tempfile.mkdtemp(prefix="protoadapt-demo-"))
cfg = ExperimentConfig({
    "seed": 0,
    "datasets": [str(root / "data" / f"d{i}") for i in (1, 2, 3)],
    "generate": {"profile": "indoor-like", "gap": 1.0, "n_train": 48, "n_eval": 12},
    "pretrain": {"steps": 2 * steps},
    "adapt": {"steps": steps},
    "descriptor_subset": 32,
    "loss_weights": {"w_sz": 200.0},
})
res = run_sequence(cfg, root / "run")

print("\nbare backbone MAE (mm):", {k: round(v["mae"], 1) for k, v in res["base"].items()})
for mode in ("incremental", "agnostic"):
    print(f"\n{mode} MAE log, rows = evaluated dataset, columns = trained through")
    for row in res["log"][mode]["mae"]:
        print("  ", "  ".join("   -   " if v is None else f"{v:7.1f}" for v in row))
    s = res["summary"][mode]["mae"]
    print(f"   forgetting {s['average_forgetting']:.2f}%  average {s['average_performance']:.1f}  SPTO {s['spto']:.1f}")
print("\nrouting accuracy:", res["routing_accuracy"])
print("outputs in", root / "run")
