"""
Classical baselines on a synthetic crowd
========================================

Writes a small synthetic benchmark in the ETH-UCY track-file layout, scores
the six heuristic baselines with best-of-20 metrics and draws the twenty
samples of a few of them for one agent.
"""
import sys
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from trajforge import baselines as bl
from trajforge.datasets import BENCHMARK_DATASETS, load_dataset
from trajforge.report import average_row, table_text
from trajforge.synthetic import write_synthetic_benchmark

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)
root = write_synthetic_benchmark(tempfile.mkdtemp(prefix="trajforge-demo-"), seed=0)

# benchmark windows: 8 observed frames, 12 to predict, stride 20
windows = {name: load_dataset(root, name, 20) for name in BENCHMARK_DATASETS}
print({name: len(ws) for name, ws in windows.items()})

rows = {}
for method in bl.BASELINES:
    row = {name: bl.evaluate_baseline(method, ws, seed=0) for name, ws in windows.items()}
    row["avg"] = average_row(row)
    rows[method] = row
print(table_text(rows))

# the twenty futures of three baselines for the first agent of one window
w = windows["eth"][0]
fig, axes = plt.subplots(1, 3, figsize=(12, 4))
for ax, method in zip(axes, ["CVM", "CVM-S", "SocialForce"]):
    pred = bl.predict(method, w, rng=np.random.default_rng(0))
    for k in range(pred.shape[0]):
        ax.plot(pred[k, 0, :, 0], pred[k, 0, :, 1], color="tab:orange", alpha=0.35, lw=1)
    ax.plot(w.obs[0, :, 0], w.obs[0, :, 1], "k.-", label="observed")
    ax.plot(w.future[0, :, 0], w.future[0, :, 1], "g.-", label="ground truth")
    ax.set_title(method)
    ax.set_aspect("equal", adjustable="datalim")
axes[0].legend(loc="best")
fig.tight_layout()
fig.savefig(out / "baseline_samples.svg")
print("wrote", out / "baseline_samples.svg")
